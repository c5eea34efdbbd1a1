//! Bit-level functional model of the REP-DPIM macro.
//!
//! Storage is a flat grid of bit cells, 256 rows by 64 columns in the
//! default geometry. Eight vertically adjacent cells in one column form a
//! DPU sharing a single AND gate, so the cell grid is also a 32 by 64 grid
//! of DPUs. Four adjacent DPU columns form the width of a sub-bank; per
//! clock, every DPU row presents one activation bit and every sub-bank
//! column group routes one selected cell to its shared AND gate, yielding
//! one product bit per (DPU row, group) lane: 32 x 16 = 512 single-bit
//! products per cycle for the default geometry.
//!
//! Addressing interpretation (the published geometry fixes sizes but not
//! the cell-to-cycle schedule): within a group, column `k/8` and cell
//! `k%8` hold weight bit `k`, so a DPU stores one 8-bit weight and wider
//! weights gang adjacent columns little-endian. The per-row scan register
//! selects which cell and which group column drive the AND gate each
//! cycle; the bit-serial controller walks it through the weight and
//! activation bits of the iterative multiply schedule.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::cia2m::{CiaMode, MultiplyTrace, Operand, TraceStep};
use crate::error::{Error, Result};
use crate::tree::{reduce, Pattern};

/// Bit cells stacked under one shared AND gate.
pub const CELLS_PER_DPU: usize = 8;
/// DPU columns spanned by one sub-bank.
pub const SBNK_DPU_COLS: usize = 4;
/// DPU rows spanned by one sub-bank.
pub const SBNK_DPU_ROWS: usize = 8;

/// Macro geometry and operating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    /// Bit-cell rows.
    pub rows: usize,
    /// Bit-cell columns.
    pub cols: usize,
    pub weight_precision: u32,
    pub input_precision: u32,
    pub clock_mhz: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            rows: 256,
            cols: 64,
            weight_precision: 8,
            input_precision: 8,
            clock_mhz: 333.0,
        }
    }
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.rows % CELLS_PER_DPU != 0 {
            return Err(Error::InvalidGeometry(format!(
                "rows must be a positive multiple of {CELLS_PER_DPU}, got {}",
                self.rows
            )));
        }
        if self.cols == 0 || self.cols % SBNK_DPU_COLS != 0 {
            return Err(Error::InvalidGeometry(format!(
                "columns must be a positive multiple of {SBNK_DPU_COLS}, got {}",
                self.cols
            )));
        }
        for (name, p) in [
            ("weight", self.weight_precision),
            ("input", self.input_precision),
        ] {
            if p == 0 || p > 16 {
                return Err(Error::InvalidGeometry(format!(
                    "{name} precision must be within 1-16, got {p}"
                )));
            }
        }
        if !(self.clock_mhz > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "clock must be positive, got {} MHz",
                self.clock_mhz
            )));
        }
        Ok(())
    }

    pub fn capacity_bits(&self) -> usize {
        self.rows * self.cols
    }

    pub fn dpu_rows(&self) -> usize {
        self.rows / CELLS_PER_DPU
    }

    pub fn sbnk_cols(&self) -> usize {
        self.cols / SBNK_DPU_COLS
    }

    /// Single-bit products produced per clock with all lanes active.
    pub fn dot_products_per_cycle(&self) -> usize {
        self.dpu_rows() * self.sbnk_cols()
    }

    /// Group columns one weight occupies at the configured precision.
    pub fn weight_group_cols(&self) -> usize {
        (self.weight_precision as usize).div_ceil(CELLS_PER_DPU)
    }
}

/// Cell selection driven onto one DPU row's shared AND gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanSelect {
    /// Cell within the DPU, `0..CELLS_PER_DPU`.
    pub cell: usize,
    /// Column within the sub-bank group, `0..SBNK_DPU_COLS`.
    pub group_col: usize,
}

/// Product bits of one clock, one per (DPU row, group) lane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclePartials {
    dpu_rows: usize,
    sbnk_cols: usize,
    lanes: Vec<bool>,
}

impl CyclePartials {
    pub fn lane(&self, dpu_row: usize, group: usize) -> bool {
        self.lanes[dpu_row * self.sbnk_cols + group]
    }

    pub fn active_lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn as_bits(&self) -> &[bool] {
        &self.lanes
    }
}

/// The shared AND gate: gated bitwise product of one activation bit and
/// the selected stored bit. Deasserting the enable forces zero without
/// touching storage.
pub fn and_compute(input_bit: bool, weight_bit: bool, pim_en: bool) -> bool {
    pim_en && input_bit && weight_bit
}

/// Full storage-plus-compute state of one macro instance.
#[derive(Debug, Clone)]
pub struct MacroState {
    config: MacroConfig,
    bits: Vec<bool>,
    pim_en: bool,
    row_scan: Vec<ScanSelect>,
}

impl MacroState {
    pub fn new(config: MacroConfig) -> Result<Self> {
        config.validate()?;
        Ok(MacroState {
            bits: vec![false; config.capacity_bits()],
            row_scan: vec![ScanSelect::default(); config.dpu_rows()],
            pim_en: false,
            config,
        })
    }

    pub fn config(&self) -> &MacroConfig {
        &self.config
    }

    pub fn pim_en(&self) -> bool {
        self.pim_en
    }

    pub fn set_pim_en(&mut self, enabled: bool) {
        self.pim_en = enabled;
    }

    fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.config.cols + col
    }

    /// Latches a bit vector into a column starting at row 0. Storage mode
    /// only.
    pub fn write_weights(&mut self, column: usize, bits: &[bool]) -> Result<()> {
        if self.pim_en {
            return Err(Error::WriteDuringCompute);
        }
        if column >= self.config.cols {
            return Err(Error::AddressOutOfRange {
                what: "column",
                index: column,
                limit: self.config.cols,
            });
        }
        if bits.len() > self.config.rows {
            return Err(Error::AddressOutOfRange {
                what: "row",
                index: bits.len(),
                limit: self.config.rows,
            });
        }
        for (row, &bit) in bits.iter().enumerate() {
            let idx = self.cell_index(row, column);
            self.bits[idx] = bit;
        }
        Ok(())
    }

    pub fn read_column(&self, column: usize) -> Result<Vec<bool>> {
        if column >= self.config.cols {
            return Err(Error::AddressOutOfRange {
                what: "column",
                index: column,
                limit: self.config.cols,
            });
        }
        Ok((0..self.config.rows)
            .map(|row| self.bits[self.cell_index(row, column)])
            .collect())
    }

    /// Latches one DPU's eight cells from a byte, LSB in the lowest cell.
    pub fn write_dpu(&mut self, dpu_row: usize, column: usize, value: u8) -> Result<()> {
        if self.pim_en {
            return Err(Error::WriteDuringCompute);
        }
        self.check_dpu(dpu_row, column)?;
        for cell in 0..CELLS_PER_DPU {
            let idx = self.cell_index(dpu_row * CELLS_PER_DPU + cell, column);
            self.bits[idx] = (value >> cell) & 1 == 1;
        }
        Ok(())
    }

    pub fn read_dpu(&self, dpu_row: usize, column: usize) -> Result<u8> {
        self.check_dpu(dpu_row, column)?;
        let mut value = 0u8;
        for cell in 0..CELLS_PER_DPU {
            if self.bits[self.cell_index(dpu_row * CELLS_PER_DPU + cell, column)] {
                value |= 1 << cell;
            }
        }
        Ok(value)
    }

    fn check_dpu(&self, dpu_row: usize, column: usize) -> Result<()> {
        if dpu_row >= self.config.dpu_rows() {
            return Err(Error::AddressOutOfRange {
                what: "DPU row",
                index: dpu_row,
                limit: self.config.dpu_rows(),
            });
        }
        if column >= self.config.cols {
            return Err(Error::AddressOutOfRange {
                what: "column",
                index: column,
                limit: self.config.cols,
            });
        }
        Ok(())
    }

    /// Points one DPU row's shared gates at a cell and group column.
    pub fn set_row_scan(&mut self, dpu_row: usize, scan: ScanSelect) -> Result<()> {
        if dpu_row >= self.config.dpu_rows() {
            return Err(Error::AddressOutOfRange {
                what: "DPU row",
                index: dpu_row,
                limit: self.config.dpu_rows(),
            });
        }
        if scan.cell >= CELLS_PER_DPU {
            return Err(Error::AddressOutOfRange {
                what: "cell",
                index: scan.cell,
                limit: CELLS_PER_DPU,
            });
        }
        if scan.group_col >= SBNK_DPU_COLS {
            return Err(Error::AddressOutOfRange {
                what: "group column",
                index: scan.group_col,
                limit: SBNK_DPU_COLS,
            });
        }
        self.row_scan[dpu_row] = scan;
        Ok(())
    }

    pub fn set_scan_all(&mut self, scan: ScanSelect) -> Result<()> {
        for row in 0..self.config.dpu_rows() {
            self.set_row_scan(row, scan)?;
        }
        Ok(())
    }

    /// One compute clock: every DPU row ANDs its activation bit with its
    /// scan-selected cell in every group. With the enable deasserted the
    /// partials are all zero regardless of inputs.
    pub fn cycle_step(&self, input_bits: &[bool]) -> Result<CyclePartials> {
        let dpu_rows = self.config.dpu_rows();
        if input_bits.len() != dpu_rows {
            return Err(Error::LengthMismatch {
                expected: dpu_rows,
                got: input_bits.len(),
            });
        }
        let sbnk_cols = self.config.sbnk_cols();
        let mut lanes = vec![false; dpu_rows * sbnk_cols];
        for row in 0..dpu_rows {
            let scan = self.row_scan[row];
            let cell_row = row * CELLS_PER_DPU + scan.cell;
            for group in 0..sbnk_cols {
                let col = group * SBNK_DPU_COLS + scan.group_col;
                let stored = self.bits[self.cell_index(cell_row, col)];
                lanes[row * sbnk_cols + group] =
                    and_compute(input_bits[row], stored, self.pim_en);
            }
        }
        Ok(CyclePartials {
            dpu_rows,
            sbnk_cols,
            lanes,
        })
    }

    /// Runs the full bit-serial iterative multiply schedule on operand
    /// pairs, returning traces value-identical to [`crate::cia2m::cia2m_multiply`].
    ///
    /// Pairs are processed in waves of one pair per DPU row. Each wave
    /// stores its weights (storage mode), recovers them through scan reads
    /// (the controller's view of the array), then per multiplier cycle
    /// gathers the term's bits through [`Self::cycle_step`]: one scan pass
    /// over the weight-residue bits and one activation-driven pass against
    /// the weight's leading-one cell. The weighted lane bits of each pair
    /// are summed by the adder tree. Leaves the macro in storage mode.
    pub fn bit_serial_mac(
        &mut self,
        activations: &[Operand],
        weights: &[Operand],
        mode: CiaMode,
    ) -> Result<Vec<MultiplyTrace>> {
        if activations.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: activations.len(),
                got: weights.len(),
            });
        }
        for a in activations {
            if a.width() > self.config.input_precision {
                return Err(Error::PrecisionMismatch {
                    what: "input",
                    got: a.width(),
                    limit: self.config.input_precision,
                });
            }
        }
        for w in weights {
            if w.width() > self.config.weight_precision {
                return Err(Error::PrecisionMismatch {
                    what: "weight",
                    got: w.width(),
                    limit: self.config.weight_precision,
                });
            }
        }
        let width = self.config.input_precision.max(self.config.weight_precision);
        let budget = mode.cycle_budget(width);
        let mut traces = Vec::with_capacity(activations.len());
        let wave_size = self.config.dpu_rows();
        for (acts, ws) in activations.chunks(wave_size).zip(weights.chunks(wave_size)) {
            traces.extend(self.run_wave(acts, ws, budget)?);
        }
        Ok(traces)
    }

    fn run_wave(
        &mut self,
        activations: &[Operand],
        weights: &[Operand],
        budget: u32,
    ) -> Result<Vec<MultiplyTrace>> {
        let w_bits = self.config.weight_precision as usize;
        let a_bits = self.config.input_precision as usize;
        let pairs = activations.len();

        // Storage phase: weight bit k of the pair on DPU row g lands in
        // cell k%8, group column k/8 of group 0.
        self.set_pim_en(false);
        for (g, w) in weights.iter().enumerate() {
            for gc in 0..self.config.weight_group_cols() {
                let byte = ((w.value() >> (gc * CELLS_PER_DPU)) & 0xFF) as u8;
                self.write_dpu(g, gc, byte)?;
            }
        }

        // Controller weight recovery: scan every weight bit back out
        // through the compute path.
        self.set_pim_en(true);
        let mut stored = vec![0u64; pairs];
        let drive: Vec<bool> = (0..self.config.dpu_rows()).map(|g| g < pairs).collect();
        for k in 0..w_bits {
            let scan = ScanSelect {
                cell: k % CELLS_PER_DPU,
                group_col: k / CELLS_PER_DPU,
            };
            self.set_scan_all(scan)?;
            let partials = self.cycle_step(&drive)?;
            for (g, s) in stored.iter_mut().enumerate() {
                if partials.lane(g, 0) {
                    *s |= 1 << k;
                }
            }
        }

        // Compute phase: pairs advance through the iterative schedule in
        // lockstep; finished pairs stop driving their row.
        let mut a_cur: Vec<u64> = activations.iter().map(|a| a.value()).collect();
        let mut b_cur = stored;
        let mut traces: Vec<MultiplyTrace> = (0..pairs)
            .map(|_| MultiplyTrace {
                cycles_used: 0,
                steps: Vec::new(),
                final_product: 0,
                residual_error: 0,
            })
            .collect();
        let mut partial_bits: Vec<Vec<u64>> = vec![Vec::new(); pairs];
        for _ in 0..budget {
            let alive: Vec<bool> = (0..pairs).map(|g| a_cur[g] != 0 && b_cur[g] != 0).collect();
            if !alive.iter().any(|&x| x) {
                break;
            }
            let ka: Vec<u32> = (0..pairs)
                .map(|g| if alive[g] { msb(a_cur[g]) } else { 0 })
                .collect();
            let kb: Vec<u32> = (0..pairs)
                .map(|g| if alive[g] { msb(b_cur[g]) } else { 0 })
                .collect();
            for bits in &mut partial_bits {
                bits.clear();
            }

            // Weight-residue pass: scan bit k of every stored weight; the
            // drive bit masks to strictly below the leading one.
            for k in 0..w_bits {
                let scan = ScanSelect {
                    cell: k % CELLS_PER_DPU,
                    group_col: k / CELLS_PER_DPU,
                };
                self.set_scan_all(scan)?;
                let mut drive = vec![false; self.config.dpu_rows()];
                for g in 0..pairs {
                    drive[g] = alive[g] && (k as u32) < kb[g];
                }
                let partials = self.cycle_step(&drive)?;
                for g in 0..pairs {
                    if partials.lane(g, 0) {
                        partial_bits[g].push(1 << (k as u32 + ka[g]));
                    }
                }
            }

            // Activation pass: drive activation bit k against the weight's
            // leading-one cell (a stored 1, so the AND passes the bit).
            for k in 0..a_bits {
                for g in 0..pairs {
                    if alive[g] {
                        let scan = ScanSelect {
                            cell: kb[g] as usize % CELLS_PER_DPU,
                            group_col: kb[g] as usize / CELLS_PER_DPU,
                        };
                        self.set_row_scan(g, scan)?;
                    }
                }
                let mut drive = vec![false; self.config.dpu_rows()];
                for g in 0..pairs {
                    drive[g] = alive[g] && (a_cur[g] >> k) & 1 == 1;
                }
                let partials = self.cycle_step(&drive)?;
                for g in 0..pairs {
                    if partials.lane(g, 0) {
                        partial_bits[g].push(1 << (k as u32 + kb[g]));
                    }
                }
            }

            // Reduce each pair's weighted bits and advance the residues.
            for g in 0..pairs {
                if !alive[g] {
                    continue;
                }
                let term = reduce(&partial_bits[g], &Pattern::Alternating);
                let a_residue = a_cur[g] - (1 << ka[g]);
                let b_residue = b_cur[g] - (1 << kb[g]);
                let trace = &mut traces[g];
                trace.final_product += term;
                trace.cycles_used += 1;
                trace.steps.push(TraceStep {
                    ka: ka[g],
                    kb: kb[g],
                    a_residue,
                    b_residue,
                    term,
                    partial_sum: trace.final_product,
                });
                a_cur[g] = a_residue;
                b_cur[g] = b_residue;
            }
        }
        for g in 0..pairs {
            traces[g].residual_error = a_cur[g] * b_cur[g];
        }
        self.set_pim_en(false);
        Ok(traces)
    }

    /// Writes the whole cell grid as CSV, one macro row per line.
    pub fn save_weight_image<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in 0..self.config.rows {
            let line: Vec<&str> = (0..self.config.cols)
                .map(|col| {
                    if self.bits[self.cell_index(row, col)] {
                        "1"
                    } else {
                        "0"
                    }
                })
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Loads a cell grid saved by [`Self::save_weight_image`], validating
    /// every dimension against this macro's geometry. Storage mode only.
    pub fn load_weight_image<R: Read>(&mut self, input: R) -> Result<()> {
        if self.pim_en {
            return Err(Error::WriteDuringCompute);
        }
        let reader = BufReader::new(input);
        let mut staged = Vec::with_capacity(self.config.capacity_bits());
        let mut rows = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != self.config.cols {
                return Err(Error::MalformedRow {
                    line: lineno,
                    reason: format!(
                        "expected {} columns, got {}",
                        self.config.cols,
                        cells.len()
                    ),
                });
            }
            for cell in cells {
                match cell {
                    "0" => staged.push(false),
                    "1" => staged.push(true),
                    other => {
                        return Err(Error::MalformedRow {
                            line: lineno,
                            reason: format!("cell must be 0 or 1, got {other:?}"),
                        })
                    }
                }
            }
            rows += 1;
        }
        if rows != self.config.rows {
            return Err(Error::MalformedRow {
                line: rows,
                reason: format!("expected {} rows, got {rows}", self.config.rows),
            });
        }
        self.bits = staged;
        Ok(())
    }
}

fn msb(v: u64) -> u32 {
    debug_assert!(v != 0);
    63 - v.leading_zeros()
}
