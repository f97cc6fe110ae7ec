use thiserror::Error;

/// Crate-wide error type.
///
/// The variant determines the process exit code used by the CLI:
/// configuration problems exit 2, missing or invalid inputs exit 3,
/// and live-sampler failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("input: {0}")]
    Input(String),

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn sampler(msg: impl Into<String>) -> Self {
        Error::Sampler(msg.into())
    }

    /// Stable exit code contract: 2 config, 3 input, 4 sampler.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) | Error::Io(_) => 3,
            Error::Sampler(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
