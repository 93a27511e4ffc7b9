use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
