use thiserror::Error;

/// Failures with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// Divergence or a degenerate calibration.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Corrupt file or a digest that disagrees with the upstream manifest.
    #[error("format error: {0}")]
    Format(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Format(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<occunav::Error> for CliError {
    fn from(e: occunav::Error) -> Self {
        use occunav::Error as E;
        match e {
            E::Diverged { .. } | E::Calibration(_) | E::InvalidSample { .. } => CliError::Numeric(e.to_string()),
            E::Format(_) => CliError::Format(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
