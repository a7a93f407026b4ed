use alloc::string::String;

/// Errors produced by the pruning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate zero-norm vector")]
    DegenerateVector,

    #[error("sequence has no text tokens")]
    EmptyText,

    #[error("invalid attention mask: {0}")]
    Mask(String),

    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bias profile layout does not match the scored sequence")]
    LayoutMismatch,

    #[error("target of {target:.4e} FLOPs is outside the reachable range [{min:.4e}, {max:.4e}]")]
    UnreachableBudget { target: f64, min: f64, max: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
