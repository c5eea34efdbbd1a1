//! Area, delay, throughput, and energy estimates for macro
//! configurations.
//!
//! Two kinds of numbers coexist here and every reported metric says which
//! it is. Derived metrics follow from the macro geometry and clock by
//! plain arithmetic. Calibrated metrics are silicon measurements of the
//! modeled design, reproduced as constants because the data needed to
//! rebuild them bottom-up (netlists, switching activity) is not part of
//! this model. A bottom-up energy estimate from the per-cell constants is
//! reported alongside the calibrated figure; the two disagree, which is
//! the point of labeling them.

use serde::{Deserialize, Serialize};

use crate::array::MacroConfig;
use crate::cia2m::CiaMode;
use crate::mapper::MappingPlan;

/// Measured constants of one bit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConstants {
    /// Share of the multiply datapath per bit, fractional because the
    /// AND gate is amortized over the eight cells of a DPU.
    pub transistors_per_bit: f64,
    pub area_um2: f64,
    pub power_nw: f64,
    pub read_delay_ps: f64,
    pub write_delay_ps: f64,
}

pub const PROPOSED_CELL: CellConstants = CellConstants {
    transistors_per_bit: 5.25,
    area_um2: 2.02,
    power_nw: 18.84,
    read_delay_ps: 105.2,
    write_delay_ps: 157.8,
};

/// Per-bit multiply transistor counts of the comparison bit cells.
pub mod baseline_cells {
    /// Prior shared-AND design.
    pub const SHARED_AND_8T75: f64 = 8.75;
    /// XNOR-based cell.
    pub const XNOR_10T: f64 = 10.0;
    /// NOR-based 12T cell.
    pub const NOR_12T: f64 = 12.0;
}

/// Process/temperature corners the compute delay was characterized at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corner {
    FF,
    TT,
    SS,
}

impl Corner {
    pub fn temperature_c(&self) -> f64 {
        match self {
            Corner::FF => -10.0,
            Corner::TT => 27.0,
            Corner::SS => 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerDelay {
    pub corner: Corner,
    pub compute_delay_ns: f64,
}

/// Characterized compute delay at a corner.
pub fn corner_delay(corner: Corner) -> f64 {
    match corner {
        Corner::FF => 1.296,
        Corner::TT => 1.968,
        Corner::SS => 2.928,
    }
}

pub fn corner_table() -> [CornerDelay; 3] {
    [Corner::FF, Corner::TT, Corner::SS].map(|corner| CornerDelay {
        corner,
        compute_delay_ns: corner_delay(corner),
    })
}

/// Calibrated figures measured on the fabricated macro. These are
/// endpoints, not formulas; the scaling chain between the derived
/// throughput and these values is not reconstructible from the published
/// constants alone.
pub mod calibrated {
    /// Energy efficiency on the pruned convolutional workload, TOPS/W.
    pub const ENERGY_EFF_TOPS_PER_W: f64 = 87.22;
    /// Starred variant with zero-skipping clock gating.
    pub const ENERGY_EFF_SPARSE_TOPS_PER_W: f64 = 348.86;
    /// Delivered throughput on the same workload, TOPS.
    pub const THROUGHPUT_TOPS: f64 = 0.43;
    /// Starred variant with zero-skipping clock gating.
    pub const THROUGHPUT_SPARSE_TOPS: f64 = 1.72;
    /// Monte-Carlo sigma of the compute delay.
    pub const DELAY_SIGMA_PS: f64 = 11.77;
    /// Supply range the macro operates over; not modeled, recorded.
    pub const VDD_RANGE_V: (f64, f64) = (0.7, 1.2);
}

/// Fraction of total power drawn by the adder tree, used to gross up the
/// cell-array power in the bottom-up estimate.
pub const TREE_POWER_SHARE: f64 = 0.136;

/// How a metric's value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Computed from geometry, clock, and cycle count.
    DerivedFormula,
    /// Reproduced from silicon measurements of the modeled design.
    PaperCalibrated,
}

/// One labeled value. Reports never carry bare numbers; the provenance
/// says whether arithmetic or measurement stands behind the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub provenance: Provenance,
    pub note: Option<String>,
}

impl Metric {
    fn derived(value: f64) -> Self {
        Metric {
            value,
            provenance: Provenance::DerivedFormula,
            note: None,
        }
    }

    fn derived_with(value: f64, note: &str) -> Self {
        Metric {
            value,
            provenance: Provenance::DerivedFormula,
            note: Some(note.to_string()),
        }
    }

    fn calibrated(value: f64, note: &str) -> Self {
        Metric {
            value,
            provenance: Provenance::PaperCalibrated,
            note: Some(note.to_string()),
        }
    }
}

/// Labeled cost estimate for a configuration, optionally scaled by a
/// mapped workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cycles_per_op: Metric,
    /// 2 x dot-products/cycle x clock / cycles, unrounded.
    pub throughput_ops_per_s: Metric,
    /// The raw value rounded to the four significant figures the design's
    /// headline numbers are quoted at.
    pub published_throughput_ops_per_s: Metric,
    pub area_um2: Metric,
    /// Bottom-up estimate from per-cell power grossed up by the tree
    /// share; kept next to the calibrated figure, not in place of it.
    pub estimated_energy_eff_tops_per_w: Metric,
    /// Measured energy efficiency; present when reporting the calibrated
    /// workload summary.
    pub energy_eff_tops_per_w: Option<Metric>,
    /// Measured delivered throughput; present with the workload summary.
    pub calibrated_throughput_tops: Option<Metric>,
    /// Total mapped cycles across the workload's layers.
    pub utilized_cycles: Option<Metric>,
    /// Mean zeroed-weight fraction across the workload's layers.
    pub pruned_fraction: Option<Metric>,
    /// Workload had no layers, so utilization fields are vacuous.
    pub empty_workload: bool,
}

/// Rounds to four significant figures, the precision headline figures
/// are quoted at. Exact for values whose 4-digit mantissa times a power
/// of ten is integral.
pub fn round_to_published(value: f64) -> f64 {
    if value == 0.0 || !value.is_finite() {
        return value;
    }
    let mut exponent = value.abs().log10().floor() as i32;
    // log10 can land one off at decade boundaries; settle by comparison.
    if 10f64.powi(exponent) > value.abs() {
        exponent -= 1;
    } else if 10f64.powi(exponent + 1) <= value.abs() {
        exponent += 1;
    }
    let scale = 10f64.powi(exponent - 3);
    (value / scale).round() * scale
}

fn raw_throughput(config: &MacroConfig, cycles: u32) -> f64 {
    let macs = config.dot_products_per_cycle() as f64;
    2.0 * macs * config.clock_mhz * 1e6 / cycles as f64
}

/// Bottom-up energy efficiency: cell power over every bit, grossed up by
/// the adder-tree share, against the raw throughput.
fn bottom_up_energy_eff(config: &MacroConfig, raw_ops_per_s: f64) -> f64 {
    let array_w = config.capacity_bits() as f64 * PROPOSED_CELL.power_nw * 1e-9;
    let total_w = array_w / (1.0 - TREE_POWER_SHARE);
    raw_ops_per_s / total_w / 1e12
}

/// Throughput and area report for a configuration running in one mode.
///
/// Cycle count follows the mode's budget at the configuration's operand
/// precision, so a 1-bit config in exact mode is the one-cycle case.
pub fn throughput(config: &MacroConfig, mode: CiaMode) -> crate::Result<CostReport> {
    config.validate()?;
    let cycles = mode.cycle_budget(config.weight_precision.max(config.input_precision));
    let raw = raw_throughput(config, cycles);
    Ok(CostReport {
        cycles_per_op: Metric::derived(cycles as f64),
        throughput_ops_per_s: Metric::derived_with(
            raw,
            "counts a MAC as two ops; headline label says TOPS but the \
             dimension works out to ops/s at this scale",
        ),
        published_throughput_ops_per_s: Metric::derived_with(
            round_to_published(raw),
            "raw value rounded to 4 significant figures",
        ),
        area_um2: Metric::derived(config.capacity_bits() as f64 * PROPOSED_CELL.area_um2),
        estimated_energy_eff_tops_per_w: Metric::derived_with(
            bottom_up_energy_eff(config, raw),
            "cell power times bits, grossed up by the adder-tree share; \
             coarser than the calibrated figure",
        ),
        energy_eff_tops_per_w: None,
        calibrated_throughput_tops: None,
        utilized_cycles: None,
        pruned_fraction: None,
        empty_workload: false,
    })
}

/// Percentage of multiply transistors saved against a baseline cell.
pub fn transistor_savings(proposed: f64, baseline: f64) -> f64 {
    100.0 * (1.0 - proposed / baseline)
}

/// Full report for a mapped workload: derived throughput at the
/// workload's cycle budget plus the calibrated silicon figures.
///
/// An empty workload is flagged and reports zero utilized cycles.
pub fn macro_summary(config: &MacroConfig, workload: &[MappingPlan]) -> crate::Result<CostReport> {
    let mode = workload
        .first()
        .map(|plan| CiaMode::Custom(plan.cycle_budget))
        .unwrap_or(CiaMode::Accurate);
    let mut report = throughput(config, mode)?;
    let utilized: u64 = workload.iter().map(|plan| plan.cycles_total).sum();
    report.utilized_cycles = Some(Metric::derived(utilized as f64));
    if workload.is_empty() {
        report.empty_workload = true;
        report.pruned_fraction = Some(Metric::derived(0.0));
    } else {
        let mean_pruned = workload.iter().map(|p| p.pruned_fraction).sum::<f64>()
            / workload.len() as f64;
        report.pruned_fraction = Some(Metric::derived(mean_pruned));
    }
    report.energy_eff_tops_per_w = Some(Metric::calibrated(
        calibrated::ENERGY_EFF_TOPS_PER_W,
        "measured on the pruned convolutional workload; 348.86 with \
         zero-skipping clock gating",
    ));
    report.calibrated_throughput_tops = Some(Metric::calibrated(
        calibrated::THROUGHPUT_TOPS,
        "measured on the pruned convolutional workload; 1.72 with \
         zero-skipping clock gating",
    ));
    Ok(report)
}
