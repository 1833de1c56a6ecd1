use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions or shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    /// A sampled density was non-finite or negative.
    #[error("invalid density {value} at ({}, {}, {})", position[0], position[1], position[2])]
    InvalidSample { position: [f64; 3], value: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
