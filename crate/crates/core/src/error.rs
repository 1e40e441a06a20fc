use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("bilinear resize cannot downscale {from:?} to {to:?}")]
    Downscale {
        from: (usize, usize),
        to: (usize, usize),
    },

    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("solver diverged after {iterations} iterations (residual {residual:.3e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("state is not converged")]
    Unconverged,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt file: {reason} (at byte {position})")]
    Corrupt { reason: String, position: usize },

    #[error("missing parameter `{0}` in model container")]
    MissingParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn corrupt(reason: impl Into<String>, position: usize) -> Self {
        Error::Corrupt {
            reason: reason.into(),
            position,
        }
    }
}
