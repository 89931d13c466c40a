use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable is not recorded on this tape (backward without forward)")]
    UnknownVariable,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("grid does not cover the distribution: leak fraction {leak:.3e} exceeds {tolerance:.1e}")]
    GridLeak { leak: f64, tolerance: f64 },

    #[error("unsupported distribution kind for {op}: {kind}")]
    UnsupportedKind { op: &'static str, kind: &'static str },

    #[error("divergence is undefined: {0}")]
    Undefined(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("transport solver failed: {0}")]
    Solver(String),

    #[error("training diverged at iteration {iteration}: {what} is not finite")]
    Diverged { iteration: usize, what: String },

    #[error("density underflow ({value:e} < 1e-300) at probe point; increase the noise scale")]
    DensityUnderflow { value: f64 },
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}
