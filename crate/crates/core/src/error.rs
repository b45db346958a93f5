use thiserror::Error;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtcError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate embedding: norm {0:e} below 1e-12")]
    DegenerateEmbedding(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("anchor {0} has no positive pair in the batch")]
    NoPositives(usize),
    #[error("degenerate batch: median pairwise feature distance is zero")]
    DegenerateBandwidth,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("class {0} mean has vanishing norm")]
    DegenerateClassMean(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, LtcError>;
