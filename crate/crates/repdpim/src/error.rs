//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operand is zero: leading-one decomposition is undefined")]
    ZeroOperand,

    #[error("operand width {0} outside supported range 1-16")]
    InvalidWidth(u32),

    #[error("operand value {value} does not fit in {width} bits")]
    OperandOutOfRange { value: u64, width: u32 },

    #[error("signed magnitude {magnitude} does not fit in {width}-bit sign-magnitude")]
    MagnitudeOverflow { magnitude: u64, width: u32 },

    #[error("exhaustive enumeration limited to width <= {max}, got {width}")]
    WidthTooLarge { width: u32, max: u32 },

    #[error("sample count must be at least 1")]
    ZeroSamples,

    #[error("histogram bin count must be at least 1")]
    ZeroBins,

    #[error("address out of range: {what} {index} (limit {limit})")]
    AddressOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("storage write attempted while PIM_en is asserted")]
    WriteDuringCompute,

    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operand precision {got} exceeds configured {what} precision {limit}")]
    PrecisionMismatch {
        what: &'static str,
        got: u32,
        limit: u32,
    },

    #[error("invalid macro geometry: {0}")]
    InvalidGeometry(String),

    #[error("adder tree needs at least 2 leaves, got {0}")]
    LeafCountTooSmall(usize),

    #[error("kind mask length {got} does not match full-adder count {expected}")]
    KindMaskMismatch { expected: usize, got: usize },

    #[error("serialized kind mask does not match the declared pattern")]
    MaskPatternConflict,

    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    #[error("filter of {filter_bits} weight bits exceeds macro capacity of {capacity_bits} bits")]
    OverCapacityFilter {
        filter_bits: u64,
        capacity_bits: u64,
    },

    #[error("pruning mask has {got} entries, layer has {expected} weights")]
    MaskShapeMismatch { expected: usize, got: usize },

    #[error("plan does not match macro geometry: {0}")]
    PlanGeometryMismatch(String),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scale must be positive, got {scale} at line {line}")]
    NonPositiveScale { scale: f64, line: usize },

    #[error("weight file contains no layers")]
    EmptyModel,

    #[error("layer dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
