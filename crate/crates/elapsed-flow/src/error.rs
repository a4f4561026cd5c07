//! Error type shared across the crate, with a fixed mapping to CLI exit
//! codes.

/// Crate-wide error type. Each variant corresponds to one failure class of
/// the command-line contract.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, grid, or model specification (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// A solver failed to converge or produced non-finite values (exit
    /// code 3).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A connectivity (Lipschitz-constant) threshold precondition is
    /// violated; the message carries both sides of the inequality (exit
    /// code 4).
    #[error("connectivity threshold violated: {0}")]
    Threshold(String),
    /// A quantitative certificate check ran to completion and failed (exit
    /// code 5).
    #[error("certificate failed: {0}")]
    Certificate(String),
    /// Underlying I/O failure (exit code 1).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error under the CLI contract.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 3,
            Error::Threshold(_) => 4,
            Error::Certificate(_) => 5,
            Error::Io(_) => 1,
        }
    }
}
