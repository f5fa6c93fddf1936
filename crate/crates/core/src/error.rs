use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fixed-point iteration diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("training failed at epoch {epoch}, sample {sample} (step {step}): {reason}")]
    Training {
        epoch: usize,
        sample: usize,
        step: usize,
        reason: String,
    },

    #[error("Lipschitz certificate rejected: {0}")]
    Certificate(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}
