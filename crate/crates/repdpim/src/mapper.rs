//! Layer-to-macro mapping, pruning-aware scheduling, and replayable
//! execution traces.
//!
//! Weights are packed column-major into DPU slots: a slot is one DPU (or
//! a pair of adjacent group columns for weights wider than 8 bits), slots
//! fill downward through the DPU rows of a column block before moving to
//! the next block, and each filter occupies a consecutive slot run so its
//! dot product accumulates within one resident pass. When a layer needs
//! more slots than the macro holds, it is split into passes, each pass a
//! full weight reload. Signed values are stored sign-magnitude with the
//! sign in the top bit of the weight's cell group.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::array::{MacroConfig, MacroState, CELLS_PER_DPU, SBNK_DPU_COLS, SBNK_DPU_ROWS};
use crate::cia2m::{signed_multiply, CiaMode, Operand};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Shape and precision of one layer's weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Filter side length; 1 for fully connected layers.
    pub filter_width: usize,
    /// Input channels (or input features for FC).
    pub depth: usize,
    /// Filters (or output features for FC).
    pub filter_count: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub weight_precision: u32,
    pub activation_precision: u32,
}

impl LayerSpec {
    pub fn conv(
        filter_width: usize,
        depth: usize,
        filter_count: usize,
        input_height: usize,
        input_width: usize,
        weight_precision: u32,
        activation_precision: u32,
    ) -> Result<Self> {
        let layer = LayerSpec {
            kind: LayerKind::Conv,
            filter_width,
            depth,
            filter_count,
            input_height,
            input_width,
            weight_precision,
            activation_precision,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn fc(
        inputs: usize,
        outputs: usize,
        weight_precision: u32,
        activation_precision: u32,
    ) -> Result<Self> {
        let layer = LayerSpec {
            kind: LayerKind::Fc,
            filter_width: 1,
            depth: inputs,
            filter_count: outputs,
            input_height: 1,
            input_width: 1,
            weight_precision,
            activation_precision,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("filter_width", self.filter_width),
            ("depth", self.depth),
            ("filter_count", self.filter_count),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
        ] {
            if v == 0 {
                return Err(Error::InvalidLayer(format!("{name} must be at least 1")));
            }
        }
        for (name, p) in [
            ("weight", self.weight_precision),
            ("activation", self.activation_precision),
        ] {
            if p == 0 || p > 16 {
                return Err(Error::InvalidLayer(format!(
                    "{name} precision must be within 1-16, got {p}"
                )));
            }
        }
        if self.kind == LayerKind::Conv
            && (self.input_height < self.filter_width || self.input_width < self.filter_width)
        {
            return Err(Error::InvalidLayer(format!(
                "input {}x{} smaller than filter {}",
                self.input_height, self.input_width, self.filter_width
            )));
        }
        Ok(())
    }

    pub fn weights_per_filter(&self) -> usize {
        self.filter_width * self.filter_width * self.depth
    }

    pub fn total_weights(&self) -> usize {
        self.weights_per_filter() * self.filter_count
    }

    /// Sliding positions of one filter over the input (stride 1, no
    /// padding); 1 for fully connected layers.
    pub fn output_positions(&self) -> usize {
        match self.kind {
            LayerKind::Fc => 1,
            LayerKind::Conv => {
                (self.input_height - self.filter_width + 1)
                    * (self.input_width - self.filter_width + 1)
            }
        }
    }

    /// Multiplies needed to evaluate the layer without pruning.
    pub fn total_macs(&self) -> u64 {
        self.total_weights() as u64 * self.output_positions() as u64
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Fc => self.depth,
            LayerKind::Conv => self.input_height * self.input_width * self.depth,
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_positions() * self.filter_count
    }
}

/// Which zeroed weights may be skipped at execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneGranularity {
    /// Skip a multiply only when its whole 8x4-DPU sub-bank group is zero,
    /// the gating the shared-AND hardware can actually do.
    SbnkGroup,
    /// Idealized per-multiply skipping.
    PerWeight,
}

/// Resident location of one filter's weights within its pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPlacement {
    pub filter: usize,
    pub pass: usize,
    /// First DPU slot of the filter's consecutive run, local to the pass.
    pub start_slot: usize,
}

/// Deterministic placement and cycle plan for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub layer: LayerSpec,
    pub config: MacroConfig,
    pub cycle_budget: u32,
    pub placements: Vec<FilterPlacement>,
    /// Macro-sized weight banks the layer occupies.
    pub banks_required: usize,
    /// Weight reloads; at least `banks_required`, more when indivisible
    /// filters leave slots stranded.
    pub passes: usize,
    pub filters_per_pass: usize,
    pub compute_cycles: u64,
    /// One write cycle per weight slot over all passes.
    pub reload_cycles: u64,
    pub cycles_total: u64,
    /// Fraction of weights zeroed by the pruning mask.
    pub pruned_fraction: f64,
    /// Fraction of multiplies still executed at the chosen granularity.
    pub work_fraction: f64,
    pub granularity: PruneGranularity,
    /// Pruning mask, true where a weight is zeroed.
    pub mask: Option<Vec<bool>>,
    /// Set when pruning removed all work.
    pub degenerate: bool,
}

/// DPU slots one weight occupies at the given precision.
fn slot_group_cols(weight_precision: u32) -> usize {
    (weight_precision as usize).div_ceil(CELLS_PER_DPU)
}

/// Slot capacity of one resident pass.
fn slots_per_pass(config: &MacroConfig, weight_precision: u32) -> usize {
    let cols_per_slot = slot_group_cols(weight_precision);
    (config.cols / cols_per_slot) * config.dpu_rows()
}

/// Physical coordinates of a pass-local slot: (DPU row, first column).
fn slot_coords(config: &MacroConfig, weight_precision: u32, slot: usize) -> (usize, usize) {
    let cols_per_slot = slot_group_cols(weight_precision);
    let dpu_rows = config.dpu_rows();
    (slot % dpu_rows, (slot / dpu_rows) * cols_per_slot)
}

/// Sub-bank group holding a pass-local slot.
fn slot_group(config: &MacroConfig, weight_precision: u32, slot: usize) -> usize {
    let (dpu_row, col) = slot_coords(config, weight_precision, slot);
    let band = dpu_row / SBNK_DPU_ROWS;
    band * config.sbnk_cols() + col / SBNK_DPU_COLS
}

/// Packs a layer onto the macro and derives its cycle estimate.
pub fn map_layer(layer: &LayerSpec, config: &MacroConfig, mode: CiaMode) -> Result<MappingPlan> {
    layer.validate()?;
    config.validate()?;
    if layer.weight_precision > config.weight_precision {
        return Err(Error::PrecisionMismatch {
            what: "weight",
            got: layer.weight_precision,
            limit: config.weight_precision,
        });
    }
    if layer.activation_precision > config.input_precision {
        return Err(Error::PrecisionMismatch {
            what: "input",
            got: layer.activation_precision,
            limit: config.input_precision,
        });
    }
    let filter_slots = layer.weights_per_filter();
    let pass_slots = slots_per_pass(config, layer.weight_precision);
    if filter_slots > pass_slots {
        return Err(Error::OverCapacityFilter {
            filter_bits: (filter_slots * layer.weight_precision as usize) as u64,
            capacity_bits: config.capacity_bits() as u64,
        });
    }
    let filters_per_pass = pass_slots / filter_slots;
    let passes = layer.filter_count.div_ceil(filters_per_pass);
    let total_bits = layer.total_weights() as u64 * layer.weight_precision as u64;
    let banks_required = total_bits.div_ceil(config.capacity_bits() as u64) as usize;
    let placements: Vec<FilterPlacement> = (0..layer.filter_count)
        .map(|filter| FilterPlacement {
            filter,
            pass: filter / filters_per_pass,
            start_slot: (filter % filters_per_pass) * filter_slots,
        })
        .collect();
    let budget = mode.cycle_budget(layer.activation_precision.max(layer.weight_precision));
    let compute_cycles = passes as u64 * layer.output_positions() as u64 * budget as u64;
    let reload_cycles = layer.total_weights() as u64;
    Ok(MappingPlan {
        layer: *layer,
        config: *config,
        cycle_budget: budget,
        placements,
        banks_required,
        passes,
        filters_per_pass,
        compute_cycles,
        reload_cycles,
        cycles_total: compute_cycles + reload_cycles,
        pruned_fraction: 0.0,
        work_fraction: 1.0,
        granularity: PruneGranularity::SbnkGroup,
        mask: None,
        degenerate: false,
    })
}

impl MappingPlan {
    /// Pass-local slot of one weight.
    fn weight_slot(&self, weight_index: usize) -> usize {
        let per_filter = self.layer.weights_per_filter();
        let placement = &self.placements[weight_index / per_filter];
        placement.start_slot + weight_index % per_filter
    }

    /// True when the multiply for this weight is skipped at execution.
    pub fn weight_skipped(&self, weight_index: usize) -> bool {
        let Some(mask) = &self.mask else {
            return false;
        };
        match self.granularity {
            PruneGranularity::PerWeight => mask[weight_index],
            PruneGranularity::SbnkGroup => {
                if !mask[weight_index] {
                    return false;
                }
                // Skipped only if every co-resident weight of the same
                // pass and sub-bank group is zero as well.
                let pass = self.placements[weight_index / self.layer.weights_per_filter()].pass;
                let group = slot_group(
                    &self.config,
                    self.layer.weight_precision,
                    self.weight_slot(weight_index),
                );
                (0..self.layer.total_weights()).all(|other| {
                    mask[other]
                        || self.placements[other / self.layer.weights_per_filter()].pass != pass
                        || slot_group(
                            &self.config,
                            self.layer.weight_precision,
                            self.weight_slot(other),
                        ) != group
                })
            }
        }
    }

    /// Multiplies the trace will execute.
    pub fn executed_macs(&self) -> u64 {
        let surviving = (0..self.layer.total_weights())
            .filter(|&w| !self.weight_skipped(w))
            .count() as u64;
        surviving * self.layer.output_positions() as u64
    }
}

/// Records a pruning mask on the plan and rescales the compute cycles by
/// the fraction of multiplies that still execute.
pub fn apply_pruning(plan: &MappingPlan, mask: &[bool]) -> Result<MappingPlan> {
    apply_pruning_with(plan, mask, plan.granularity)
}

pub fn apply_pruning_with(
    plan: &MappingPlan,
    mask: &[bool],
    granularity: PruneGranularity,
) -> Result<MappingPlan> {
    let total = plan.layer.total_weights();
    if mask.len() != total {
        return Err(Error::MaskShapeMismatch {
            expected: total,
            got: mask.len(),
        });
    }
    let mut pruned = plan.clone();
    pruned.granularity = granularity;
    pruned.mask = Some(mask.to_vec());
    let zeroed = mask.iter().filter(|&&m| m).count();
    pruned.pruned_fraction = zeroed as f64 / total as f64;
    let executed = pruned.executed_macs();
    pruned.work_fraction = executed as f64 / plan.layer.total_macs() as f64;
    pruned.compute_cycles =
        (plan.compute_cycles as f64 * pruned.work_fraction).round() as u64;
    pruned.cycles_total = pruned.compute_cycles + pruned.reload_cycles;
    pruned.degenerate = executed == 0;
    Ok(pruned)
}

/// One step of an execution trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum TraceOp {
    /// Load one filter's weights into its resident slots.
    WriteFilter {
        pass: usize,
        filter: usize,
        /// First column of the filter's slot run.
        column: usize,
        start_slot: usize,
        /// Sign-magnitude weight values, one per slot.
        values: Vec<i64>,
    },
    /// One filter's dot product at one output position.
    Mac {
        pass: usize,
        filter: usize,
        output_position: usize,
        column: usize,
        activations: Vec<i64>,
        weights: Vec<i64>,
    },
}

/// Replayable schedule: alternating write and compute phases whose
/// execution on a macro reproduces the layer outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub layer: LayerSpec,
    pub config: MacroConfig,
    pub cycle_budget: u32,
    pub ops: Vec<TraceOp>,
}

/// Builds the ordered write/compute schedule for one input.
///
/// The trace is a pure function of plan, weights, and input; replaying it
/// drives every surviving multiply through the macro datapath.
pub fn schedule(plan: &MappingPlan, weights: &[i64], input: &[i64]) -> Result<ExecutionTrace> {
    let layer = &plan.layer;
    if weights.len() != layer.total_weights() {
        return Err(Error::LengthMismatch {
            expected: layer.total_weights(),
            got: weights.len(),
        });
    }
    if input.len() != layer.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "layer expects {} input values, got {}",
            layer.input_len(),
            input.len()
        )));
    }
    check_magnitudes(weights, layer.weight_precision, "weight")?;
    check_magnitudes(input, layer.activation_precision, "activation")?;
    let per_filter = layer.weights_per_filter();
    let mut ops = Vec::new();
    for pass in 0..plan.passes {
        let pass_filters: Vec<&FilterPlacement> = plan
            .placements
            .iter()
            .filter(|p| p.pass == pass)
            .collect();
        for placement in &pass_filters {
            let f = placement.filter;
            let (_, column) =
                slot_coords(&plan.config, layer.weight_precision, placement.start_slot);
            ops.push(TraceOp::WriteFilter {
                pass,
                filter: f,
                column,
                start_slot: placement.start_slot,
                values: weights[f * per_filter..(f + 1) * per_filter].to_vec(),
            });
        }
        for position in 0..layer.output_positions() {
            for placement in &pass_filters {
                let f = placement.filter;
                let mut acts = Vec::new();
                let mut ws = Vec::new();
                for j in 0..per_filter {
                    let w_index = f * per_filter + j;
                    if plan.weight_skipped(w_index) {
                        continue;
                    }
                    acts.push(activation_at(layer, input, position, j));
                    ws.push(weights[w_index]);
                }
                if acts.is_empty() {
                    continue;
                }
                let (_, column) =
                    slot_coords(&plan.config, layer.weight_precision, placement.start_slot);
                ops.push(TraceOp::Mac {
                    pass,
                    filter: f,
                    output_position: position,
                    column,
                    activations: acts,
                    weights: ws,
                });
            }
        }
    }
    Ok(ExecutionTrace {
        layer: *layer,
        config: plan.config,
        cycle_budget: plan.cycle_budget,
        ops,
    })
}

fn check_magnitudes(values: &[i64], precision: u32, what: &'static str) -> Result<()> {
    let limit = 1i64 << (precision - 1);
    for &v in values {
        if v.abs() >= limit {
            return Err(Error::PrecisionMismatch {
                what,
                got: 64 - v.unsigned_abs().leading_zeros() + 1,
                limit: precision,
            });
        }
    }
    Ok(())
}

/// Input value multiplied by within-filter weight `j` at an output
/// position. Filters slide in row-major order; weight layout is
/// `[ky][kx][channel]`, input layout `[y][x][channel]`.
fn activation_at(layer: &LayerSpec, input: &[i64], position: usize, j: usize) -> i64 {
    match layer.kind {
        LayerKind::Fc => input[j],
        LayerKind::Conv => {
            let out_w = layer.input_width - layer.filter_width + 1;
            let (oy, ox) = (position / out_w, position % out_w);
            let ky = j / (layer.filter_width * layer.depth);
            let kx = (j / layer.depth) % layer.filter_width;
            let c = j % layer.depth;
            input[((oy + ky) * layer.input_width + (ox + kx)) * layer.depth + c]
        }
    }
}

impl ExecutionTrace {
    /// Multiplies the compute ops perform.
    pub fn executed_macs(&self) -> u64 {
        self.ops
            .iter()
            .map(|op| match op {
                TraceOp::Mac { activations, .. } => activations.len() as u64,
                TraceOp::WriteFilter { .. } => 0,
            })
            .sum()
    }

    /// Executes the trace on a macro, returning outputs laid out as
    /// `[position][filter]`.
    ///
    /// Write ops load sign-magnitude weight bytes into their resident
    /// slots; compute ops route every multiply through the bit-serial
    /// datapath and sum signed products off-array.
    pub fn replay(&self, m: &mut MacroState) -> Result<Vec<i64>> {
        if *m.config() != self.config {
            return Err(Error::PlanGeometryMismatch(format!(
                "trace was planned for {}x{}, macro is {}x{}",
                self.config.rows,
                self.config.cols,
                m.config().rows,
                m.config().cols
            )));
        }
        let layer = &self.layer;
        let mut outputs = vec![0i64; layer.output_len()];
        let mode = CiaMode::Custom(self.cycle_budget);
        for op in &self.ops {
            match op {
                TraceOp::WriteFilter {
                    start_slot, values, ..
                } => {
                    m.set_pim_en(false);
                    for (j, &v) in values.iter().enumerate() {
                        let (dpu_row, column) = slot_coords(
                            &self.config,
                            layer.weight_precision,
                            start_slot + j,
                        );
                        for (gc, byte) in
                            sign_magnitude_bytes(v, layer.weight_precision).into_iter().enumerate()
                        {
                            m.write_dpu(dpu_row, column + gc, byte)?;
                        }
                    }
                }
                TraceOp::Mac {
                    filter,
                    output_position,
                    activations,
                    weights,
                    ..
                } => {
                    let mag_a: Vec<Operand> = activations
                        .iter()
                        .map(|&a| Operand::new(a.unsigned_abs(), layer.activation_precision))
                        .collect::<Result<_>>()?;
                    let mag_w: Vec<Operand> = weights
                        .iter()
                        .map(|&w| Operand::new(w.unsigned_abs(), layer.weight_precision))
                        .collect::<Result<_>>()?;
                    let traces = m.bit_serial_mac(&mag_a, &mag_w, mode)?;
                    let mut acc = 0i64;
                    for ((t, &a), &w) in traces.iter().zip(activations).zip(weights) {
                        let product = t.final_product as i64;
                        acc += if (a < 0) != (w < 0) { -product } else { product };
                    }
                    outputs[output_position * layer.filter_count + filter] += acc;
                }
            }
        }
        m.set_pim_en(false);
        Ok(outputs)
    }

    /// Writes the `phase,op,bank,column,cycles` log, one row per op.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"phase,op,bank,column,cycles\n")?;
        for op in &self.ops {
            match op {
                TraceOp::WriteFilter {
                    pass,
                    column,
                    values,
                    ..
                } => writeln!(out, "write,write_filter,{pass},{column},{}", values.len())?,
                TraceOp::Mac {
                    pass, column, ..
                } => writeln!(
                    out,
                    "compute,bit_serial_mac,{pass},{column},{}",
                    self.cycle_budget
                )?,
            }
        }
        Ok(())
    }
}

/// Sign-magnitude cell bytes for one weight, little-endian magnitude with
/// the sign in the top bit of the final byte.
fn sign_magnitude_bytes(value: i64, precision: u32) -> Vec<u8> {
    let groups = slot_group_cols(precision);
    let magnitude = value.unsigned_abs();
    let mut bytes: Vec<u8> = (0..groups)
        .map(|g| ((magnitude >> (g * CELLS_PER_DPU)) & 0xFF) as u8)
        .collect();
    if value < 0 {
        let sign_bit = (precision as usize - 1) % CELLS_PER_DPU;
        bytes[groups - 1] |= 1 << sign_bit;
    }
    bytes
}

/// Layer outputs computed directly through the multiplier, the oracle the
/// replayed trace is checked against.
pub fn reference_layer_outputs(
    layer: &LayerSpec,
    weights: &[i64],
    input: &[i64],
    mode: CiaMode,
    plan_for_skips: Option<&MappingPlan>,
) -> Result<Vec<i64>> {
    let per_filter = layer.weights_per_filter();
    let width = layer.activation_precision.max(layer.weight_precision) + 1;
    let mut outputs = vec![0i64; layer.output_len()];
    for position in 0..layer.output_positions() {
        for f in 0..layer.filter_count {
            let mut acc = 0i64;
            for j in 0..per_filter {
                let w_index = f * per_filter + j;
                if let Some(plan) = plan_for_skips {
                    if plan.weight_skipped(w_index) {
                        continue;
                    }
                }
                let a = activation_at(layer, input, position, j);
                let t = signed_multiply(a, weights[w_index], width, mode)?;
                acc += t.product();
            }
            outputs[position * layer.filter_count + f] = acc;
        }
    }
    Ok(outputs)
}
