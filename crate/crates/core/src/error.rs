use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or unsupported parameter combination.
    #[error("config error: {0}")]
    Config(String),

    /// Mesh resolution too coarse for the requested horizon.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Inconsistent discrete structures (mismatched pair lists, rank deficiency, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Iterative or direct solver failure; carries the final residual where known.
    #[error("solver error: {0}")]
    Solver(String),

    /// File I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 for validation problems, 2 for solver/runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Resolution(_) | Error::Structural(_) => 1,
            Error::Solver(_) | Error::Io { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
