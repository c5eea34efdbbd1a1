//! Bit-exact functional simulator, approximate-arithmetic library, and
//! calibrated cost model for the REP-DPIM processing-in-memory macro.
//!
//! REP-DPIM is a 16 Kb digital PIM macro built from resource-shared DPUs
//! (eight dual-port 5T latches sharing one 2T AND gate), a transistor-reduced
//! interspersed adder tree (TRAIT), and a cycle-controlled iterative
//! approximate/accurate multiplier (CIA²M). This crate models the macro at
//! the functional level: every stored bit, every AND partial, and every
//! adder-tree reduction is simulated exactly, while electrical behaviour
//! (delays, power, area) enters through calibrated constants in the cost
//! model.
//!
//! # Modules
//!
//! - [`cia2m`] -- exact and cycle-budgeted approximate multiplication via
//!   iterative leading-one decomposition
//! - [`analysis`] -- exhaustive and sampled error characterization of the
//!   multiplier against the exact product
//! - [`array`] -- bit-level model of the macro: Res-DPU storage, shared-AND
//!   compute, sub-bank geometry, and the bit-serial MAC schedule
//! - [`tree`] -- functional adder-tree reduction plus structural
//!   transistor/area accounting for interspersed full-adder kinds
//! - [`cost`] -- throughput, area, power and energy-efficiency estimates
//!   with per-field provenance labels
//! - [`mapper`] -- conv/FC layer mapping onto macro columns, pruning-aware
//!   scheduling, and replayable execution traces
//! - [`nn`] -- desk-scale quantized inference: CSV weight ingestion, INT8
//!   quantization, and quality-of-result reporting
//!
//! # Quick start
//!
//! ```
//! use repdpim::cia2m::{cia2m_multiply, CiaMode, Operand};
//!
//! let a = Operand::new(255, 8).unwrap();
//! let b = Operand::new(255, 8).unwrap();
//! let trace = cia2m_multiply(a, b, CiaMode::Approximate);
//! assert_eq!(trace.final_product, 64064);
//! assert_eq!(trace.final_product + trace.residual_error, 255 * 255);
//! ```

pub mod analysis;
pub mod array;
pub mod cia2m;
pub mod cost;
pub mod error;
pub mod mapper;
pub mod nn;
pub mod tree;

pub use error::{Error, Result};

// The guide under book/ doubles as a test suite: every Rust snippet in the
// chapters is compiled and run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Multiplier, "../../../book/src/multiplier.md");
    chapter!(ErrorAnalysis, "../../../book/src/error-analysis.md");
    chapter!(MacroModel, "../../../book/src/macro-model.md");
    chapter!(AdderTree, "../../../book/src/adder-tree.md");
    chapter!(CostModel, "../../../book/src/cost-model.md");
    chapter!(Mapping, "../../../book/src/mapping.md");
    chapter!(Inference, "../../../book/src/inference.md");
}
