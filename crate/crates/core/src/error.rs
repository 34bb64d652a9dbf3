use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Numeric failures (non-finite values, singular solves, divergence) are kept
/// distinct from shape/config errors so callers can map them to different exit
/// paths.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("state {x:?} lies within tolerance of a non-smooth point of {system}")]
    NonSmoothPoint { system: String, x: Vec<f64> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("loss requires Jacobians but the dataset has none")]
    MissingJacobians,

    #[error("every test point has a vanishing reference displacement ({skipped} skipped)")]
    DivisionNearZero { skipped: usize },

    #[error("tangent frame collapsed at step {step} (|R_ii| = {value:e})")]
    DegenerateFrame { step: usize, value: f64 },

    #[error("all {members} ensemble members failed; first failure: {first}")]
    EnsembleFailed { members: usize, first: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("assignment requires equal sample counts ({0} vs {1})")]
    UnequalCounts(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("singular linearization at block {block} (pivot {pivot:e})")]
    SingularLinearization { block: usize, pivot: f64 },

    #[error("shadow refinement did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Box<crate::shadowing::ShadowResult>,
    },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or files).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::NonSmoothPoint { .. }
                | Error::NonFiniteLoss { .. }
                | Error::DivisionNearZero { .. }
                | Error::DegenerateFrame { .. }
                | Error::EnsembleFailed { .. }
                | Error::SingularLinearization { .. }
                | Error::NoConvergence { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
