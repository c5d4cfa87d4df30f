use thiserror::Error;

/// Errors surfaced by the toolkit. Each variant maps onto a CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("convergence error after {iterations} iterations (last residual {last:.3e})")]
    Convergence { iterations: usize, last: f64, history: Vec<f64> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Usage(_) | Error::Serde(_) => 2,
            Error::Numerical(_) | Error::Convergence { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
