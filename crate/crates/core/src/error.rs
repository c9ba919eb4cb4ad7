use thiserror::Error;

/// Errors raised by the library. Each variant names the module that failed so
/// training aborts carry a module-tagged diagnostic.
#[derive(Debug, Error)]
pub enum MrdgError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation in {module}: {message}")]
    Contract { module: &'static str, message: String },
    #[error("retrieval error: {0}")]
    Retrieval(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("non-finite value in {module}: {message}")]
    NonFinite { module: &'static str, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MrdgError {
    pub fn contract(module: &'static str, message: impl Into<String>) -> Self {
        MrdgError::Contract {
            module,
            message: message.into(),
        }
    }

    pub fn non_finite(module: &'static str, message: impl Into<String>) -> Self {
        MrdgError::NonFinite {
            module,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MrdgError>;
