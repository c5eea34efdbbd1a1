//! Error characterization of the iterative multiplier against the exact
//! product.
//!
//! The multiplier only ever underestimates, so "error" throughout this
//! module means the non-negative shortfall `exact - approximate`, which
//! equals the trace's `residual_error`. Exhaustive enumeration covers every
//! operand pair up to width 8 (65 536 cases); wider operands are
//! characterized by seeded sampling. All aggregation is integer-exact and
//! merges associatively, so results are identical no matter how the work is
//! split across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cia2m::{multiply_with_budget, CiaMode};
use crate::error::{Error, Result};

/// Widest operand for which full enumeration is permitted.
pub const MAX_EXHAUSTIVE_WIDTH: u32 = 8;

/// Aggregate error metrics for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub cycle_budget: u32,
    pub width: u32,
    /// Operand pairs examined.
    pub total_cases: u64,
    /// Pairs reproduced exactly.
    pub exact_cases: u64,
    pub mean_abs_error: f64,
    pub max_abs_error: u64,
    /// Largest error relative to its own exact product; pairs with a zero
    /// product are excluded (they are always exact anyway).
    pub max_rel_error: f64,
    /// Mean error normalized by the largest representable product,
    /// `(2^width - 1)^2`.
    pub nmed: f64,
}

/// Running totals that merge associatively across threads.
///
/// The maximum relative error is tracked as an integer witness pair
/// (error, exact product) and compared by cross-multiplication, so no
/// floating-point rounding enters until the final division.
#[derive(Clone, Copy)]
struct Accumulator {
    total: u64,
    exact: u64,
    err_sum: u128,
    max_err: u64,
    rel_num: u64,
    rel_den: u64,
}

impl Accumulator {
    fn empty() -> Self {
        Accumulator {
            total: 0,
            exact: 0,
            err_sum: 0,
            max_err: 0,
            rel_num: 0,
            rel_den: 0,
        }
    }

    fn observe(&mut self, a: u64, b: u64, budget: u32) {
        let exact = a * b;
        let err = multiply_with_budget(a, b, budget).residual_error;
        debug_assert_eq!(
            exact - err,
            multiply_with_budget(a, b, budget).final_product
        );
        self.total += 1;
        if err == 0 {
            self.exact += 1;
        }
        self.err_sum += err as u128;
        self.max_err = self.max_err.max(err);
        if exact != 0 && ratio_less(self.rel_num, self.rel_den, err, exact) {
            self.rel_num = err;
            self.rel_den = exact;
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        self.total += other.total;
        self.exact += other.exact;
        self.err_sum += other.err_sum;
        self.max_err = self.max_err.max(other.max_err);
        if ratio_less(self.rel_num, self.rel_den, other.rel_num, other.rel_den) {
            self.rel_num = other.rel_num;
            self.rel_den = other.rel_den;
        }
        self
    }

    fn finalize(self, width: u32, cycle_budget: u32) -> ErrorStats {
        let mean_abs_error = self.err_sum as f64 / self.total as f64;
        let max_value = (1u64 << width) - 1;
        let max_product = (max_value * max_value) as f64;
        let max_rel_error = if self.rel_den == 0 {
            0.0
        } else {
            self.rel_num as f64 / self.rel_den as f64
        };
        ErrorStats {
            cycle_budget,
            width,
            total_cases: self.total,
            exact_cases: self.exact,
            mean_abs_error,
            max_abs_error: self.max_err,
            max_rel_error,
            nmed: mean_abs_error / max_product,
        }
    }
}

/// True when n1/d1 < n2/d2, with a zero denominator ranking below every
/// real ratio.
fn ratio_less(n1: u64, d1: u64, n2: u64, d2: u64) -> bool {
    if d2 == 0 {
        return false;
    }
    if d1 == 0 {
        return true;
    }
    (n1 as u128) * (d2 as u128) < (n2 as u128) * (d1 as u128)
}

fn check_exhaustive_width(width: u32) -> Result<()> {
    if width == 0 || width > crate::cia2m::MAX_WIDTH {
        return Err(Error::InvalidWidth(width));
    }
    if width > MAX_EXHAUSTIVE_WIDTH {
        return Err(Error::WidthTooLarge {
            width,
            max: MAX_EXHAUSTIVE_WIDTH,
        });
    }
    Ok(())
}

/// Error metrics over every operand pair of the given width.
pub fn exhaustive_stats(width: u32, mode: CiaMode) -> Result<ErrorStats> {
    check_exhaustive_width(width)?;
    let budget = mode.cycle_budget(width);
    let size = 1u64 << width;
    let acc = (0..size)
        .into_par_iter()
        .fold(Accumulator::empty, |mut acc, a| {
            for b in 0..size {
                acc.observe(a, b, budget);
            }
            acc
        })
        .reduce(Accumulator::empty, Accumulator::merge);
    Ok(acc.finalize(width, budget))
}

/// Error metrics over an explicit operand workload.
///
/// Values must fit the stated width. Feeding every pair of a width
/// reproduces [`exhaustive_stats`] exactly; feeding a layer's actual
/// activation/weight pairs characterizes that workload instead of the
/// uniform distribution.
pub fn stats_for_pairs(width: u32, mode: CiaMode, pairs: &[(u64, u64)]) -> Result<ErrorStats> {
    if width == 0 || width > crate::cia2m::MAX_WIDTH {
        return Err(Error::InvalidWidth(width));
    }
    if pairs.is_empty() {
        return Err(Error::ZeroSamples);
    }
    let limit = 1u64 << width;
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= limit || *b >= limit) {
        return Err(Error::OperandOutOfRange {
            value: a.max(b),
            width,
        });
    }
    let budget = mode.cycle_budget(width);
    let acc = pairs
        .par_iter()
        .fold(Accumulator::empty, |mut acc, &(a, b)| {
            acc.observe(a, b, budget);
            acc
        })
        .reduce(Accumulator::empty, Accumulator::merge);
    Ok(acc.finalize(width, budget))
}

/// Error metrics over operand pairs drawn uniformly with a seeded
/// generator. Two runs with the same arguments return identical stats.
pub fn sampled_stats(width: u32, mode: CiaMode, samples: u64, seed: u64) -> Result<ErrorStats> {
    if width == 0 || width > crate::cia2m::MAX_WIDTH {
        return Err(Error::InvalidWidth(width));
    }
    if samples == 0 {
        return Err(Error::ZeroSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = 1u64 << width;
    let pairs: Vec<(u64, u64)> = (0..samples)
        .map(|_| (rng.gen_range(0..limit), rng.gen_range(0..limit)))
        .collect();
    stats_for_pairs(width, mode, &pairs)
}

/// Binned error distribution over every operand pair of a width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub width: u32,
    pub cycle_budget: u32,
    /// `counts.len() + 1` strictly increasing edges; bin `i` covers error
    /// values in `[bin_edges[i], bin_edges[i + 1])`.
    pub bin_edges: Vec<u64>,
    pub counts: Vec<u64>,
}

impl ErrorHistogram {
    pub fn total_mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Writes `error_bin_low,error_bin_high,count` rows with LF endings.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"error_bin_low,error_bin_high,count\n")?;
        for (i, count) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], count)?;
        }
        Ok(())
    }
}

/// Bins the absolute errors of every operand pair of the given width.
///
/// At most `bins` bins are produced; when the observed error span has
/// fewer than `bins` distinct values the bin count shrinks to the span so
/// that edges stay strictly increasing. Edges are the integer splits
/// `floor(i * span / k)`, covering `[0, max_error + 1)`.
pub fn histogram(width: u32, mode: CiaMode, bins: usize) -> Result<ErrorHistogram> {
    check_exhaustive_width(width)?;
    if bins == 0 {
        return Err(Error::ZeroBins);
    }
    let budget = mode.cycle_budget(width);
    let size = 1u64 << width;
    // With at least one cycle the error is bounded by the product of the
    // first-cycle residues; with none it is the exact product itself.
    let max_possible = if budget == 0 {
        (size - 1) * (size - 1)
    } else if width == 1 {
        0
    } else {
        let r = (1u64 << (width - 1)) - 1;
        r * r
    };
    let dense = (0..size)
        .into_par_iter()
        .fold(
            || vec![0u64; max_possible as usize + 1],
            |mut dense, a| {
                for b in 0..size {
                    let err = multiply_with_budget(a, b, budget).residual_error;
                    dense[err as usize] += 1;
                }
                dense
            },
        )
        .reduce(
            || vec![0u64; max_possible as usize + 1],
            |mut lhs, rhs| {
                for (l, r) in lhs.iter_mut().zip(rhs) {
                    *l += r;
                }
                lhs
            },
        );
    let max_err = dense
        .iter()
        .rposition(|&c| c != 0)
        .expect("every pair set produces at least the zero error") as u64;
    let span = max_err + 1;
    let k = (bins as u64).min(span);
    let bin_edges: Vec<u64> = (0..=k).map(|i| i * span / k).collect();
    let mut counts = vec![0u64; k as usize];
    for (err, &count) in dense.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let bin = bin_edges.partition_point(|&edge| edge <= err as u64) - 1;
        debug_assert!(bin_edges[bin] <= err as u64 && (err as u64) < bin_edges[bin + 1]);
        counts[bin] += count;
    }
    Ok(ErrorHistogram {
        width,
        cycle_budget: budget,
        bin_edges,
        counts,
    })
}
