//! Cycle-controlled iterative approximate/accurate multiplication (CIA²M).
//!
//! CIA²M multiplies unsigned magnitudes by repeatedly peeling the leading
//! one from both operands. Writing an operand pair as
//! `a = a_r + 2^ka` and `b = b_r + 2^kb`, a single cycle contributes
//!
//! ```text
//! term = a * 2^kb + b_r * 2^ka
//!      = 2^(ka+kb) + a_r * 2^kb + b_r * 2^ka
//! ```
//!
//! which is the exact product minus the residue cross term `a_r * b_r`.
//! The next cycle restarts on `(a_r, b_r)`, so after any number of cycles
//! the accumulated sum plus the product of the final residues reconstructs
//! `a * b` exactly. Stopping after a fixed cycle budget yields an
//! underestimate whose error is exactly the product of the final
//! residues; running until a residue hits zero yields the exact product.
//! The budget is the run-time accuracy/latency knob: 3 cycles for the
//! approximate operating point, 4 for the accurate one, operand width for
//! guaranteed exactness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported operand width in bits.
pub const MAX_WIDTH: u32 = 16;

/// An unsigned magnitude together with its declared bit-width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operand {
    value: u64,
    width: u32,
}

impl Operand {
    /// Validates `value < 2^width` and `1 <= width <= 16`.
    pub fn new(value: u64, width: u32) -> Result<Self> {
        if width == 0 || width > MAX_WIDTH {
            return Err(Error::InvalidWidth(width));
        }
        if value >> width != 0 {
            return Err(Error::OperandOutOfRange { value, width });
        }
        Ok(Self { value, width })
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }
}

/// Leading-one split of a positive value: `x = 2^k + residue`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposition {
    /// Bit index of the leading one.
    pub k: u32,
    /// Remainder after the leading one is removed; always `< 2^k`.
    pub residue: u64,
}

/// Splits off the leading one of a positive operand.
///
/// Fails with [`Error::ZeroOperand`] for zero; callers short-circuit zero
/// products before decomposing.
pub fn leading_one(x: Operand) -> Result<Decomposition> {
    decompose(x.value).ok_or(Error::ZeroOperand)
}

fn decompose(v: u64) -> Option<Decomposition> {
    if v == 0 {
        return None;
    }
    let k = 63 - v.leading_zeros();
    Some(Decomposition {
        k,
        residue: v - (1 << k),
    })
}

/// Multiplier operating mode, i.e. the cycle budget policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiaMode {
    /// 3 cycles: the accelerated approximate operating point.
    Approximate,
    /// 4 cycles: the accurate operating point (still not bit-exact for
    /// operands with more than 4 set bits).
    Accurate,
    /// As many cycles as the operand width, an upper bound on set bits;
    /// always bit-exact.
    Exact,
    /// Explicit cycle budget.
    Custom(u32),
}

impl CiaMode {
    /// Resolves the cycle budget for operands of the given width.
    pub fn cycle_budget(&self, width: u32) -> u32 {
        match self {
            CiaMode::Approximate => 3,
            CiaMode::Accurate => 4,
            CiaMode::Exact => width,
            CiaMode::Custom(n) => *n,
        }
    }
}

/// One multiplier cycle as recorded in a [`MultiplyTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Leading-one index of the activation-side residue entering the cycle.
    pub ka: u32,
    /// Leading-one index of the weight-side residue entering the cycle.
    pub kb: u32,
    /// Activation residue after this cycle's peel.
    pub a_residue: u64,
    /// Weight residue after this cycle's peel.
    pub b_residue: u64,
    /// Contribution accumulated this cycle.
    pub term: u64,
    /// Running product after this cycle.
    pub partial_sum: u64,
}

/// Per-cycle record of a CIA²M multiplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplyTrace {
    /// Cycles actually executed (early termination stops short of the budget).
    pub cycles_used: u32,
    pub steps: Vec<TraceStep>,
    /// Accumulated product; never exceeds the exact product.
    pub final_product: u64,
    /// Product of the final residues: the tail left un-accumulated.
    pub residual_error: u64,
}

impl MultiplyTrace {
    fn zero() -> Self {
        MultiplyTrace {
            cycles_used: 0,
            steps: Vec::new(),
            final_product: 0,
            residual_error: 0,
        }
    }

    /// True when the trace reconstructs the exact product.
    pub fn is_exact(&self) -> bool {
        self.residual_error == 0
    }
}

/// Multiplies two magnitudes with the given cycle budget policy.
///
/// Each cycle peels the leading one from both residues, accumulates the
/// cross terms, and advances to the residue pair. Iteration stops at the
/// budget or as soon as either residue reaches zero, whichever comes
/// first. A zero operand short-circuits to a zero product in zero cycles:
/// the AND array produces all-zero partials for it, so no cycle is spent.
/// A zero budget accumulates nothing, leaving the entire exact product in
/// `residual_error`.
pub fn cia2m_multiply(a: Operand, b: Operand, mode: CiaMode) -> MultiplyTrace {
    let width = a.width.max(b.width);
    let budget = mode.cycle_budget(width);
    multiply_with_budget(a.value, b.value, budget)
}

pub(crate) fn multiply_with_budget(a: u64, b: u64, budget: u32) -> MultiplyTrace {
    if a == 0 || b == 0 {
        return MultiplyTrace::zero();
    }
    let mut trace = MultiplyTrace::zero();
    let (mut a, mut b) = (a, b);
    for _ in 0..budget {
        // Both operands are nonzero here.
        let da = decompose(a).unwrap();
        let db = decompose(b).unwrap();
        let term = (a << db.k) + (db.residue << da.k);
        trace.final_product += term;
        trace.cycles_used += 1;
        trace.steps.push(TraceStep {
            ka: da.k,
            kb: db.k,
            a_residue: da.residue,
            b_residue: db.residue,
            term,
            partial_sum: trace.final_product,
        });
        a = da.residue;
        b = db.residue;
        if a == 0 || b == 0 {
            break;
        }
    }
    trace.residual_error = a * b;
    trace
}

/// Reference product, the oracle the approximate modes are measured against.
pub fn exact_multiply(a: Operand, b: Operand) -> u64 {
    a.value * b.value
}

/// A CIA²M result on magnitudes with a sign-magnitude sign bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedTrace {
    /// True when the product is negative. Zero products are positive.
    pub negative: bool,
    /// Trace of the magnitude multiplication.
    pub magnitude: MultiplyTrace,
}

impl SignedTrace {
    /// Signed value of the (possibly approximate) product.
    pub fn product(&self) -> i64 {
        let m = self.magnitude.final_product as i64;
        if self.negative {
            -m
        } else {
            m
        }
    }
}

/// Sign-magnitude multiplication: CIA²M on the magnitudes, XOR of the
/// operand signs applied to the result.
///
/// `width` counts the sign bit, so magnitudes must satisfy
/// `|x| < 2^(width-1)`.
pub fn signed_multiply(a: i64, b: i64, width: u32, mode: CiaMode) -> Result<SignedTrace> {
    if width == 0 || width > MAX_WIDTH {
        return Err(Error::InvalidWidth(width));
    }
    let mag_width = width - 1;
    let check = |v: i64| -> Result<u64> {
        let magnitude = v.unsigned_abs();
        if magnitude >> mag_width != 0 {
            return Err(Error::MagnitudeOverflow { magnitude, width });
        }
        Ok(magnitude)
    };
    let ma = check(a)?;
    let mb = check(b)?;
    let budget = mode.cycle_budget(mag_width);
    let magnitude = multiply_with_budget(ma, mb, budget);
    let negative = (a < 0) != (b < 0) && magnitude.final_product != 0;
    Ok(SignedTrace {
        negative,
        magnitude,
    })
}
