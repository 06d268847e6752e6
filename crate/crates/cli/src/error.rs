use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {message}", path.display())]
    Csv { path: PathBuf, line: u64, message: String },

    #[error("{context}: {source}")]
    Domain {
        context: &'static str,
        #[source]
        source: curvesurvey::Error,
    },

    #[error("verification failed: largest discrepancy {discrepancy:e} exceeds {tolerance:e}")]
    VerificationFailed { discrepancy: f64, tolerance: f64 },
}

impl CliError {
    /// 2 for configuration, IO and input-format problems; 1 for failures of
    /// the computation itself.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Csv { .. } => 2,
            CliError::Domain { .. } | CliError::VerificationFailed { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a context label to library errors.
pub trait DomainContext<T> {
    fn context(self, context: &'static str) -> Result<T>;
}

impl<T> DomainContext<T> for curvesurvey::Result<T> {
    fn context(self, context: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Domain { context, source })
    }
}
