use thiserror::Error;

use crate::gridworld::GridError;
use blockplan_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("architecture check failed: {0}")]
    Architecture(String),
    #[error("non-finite {what} at step {step}; batch: {provenance}")]
    NonFinite { what: &'static str, step: u64, provenance: String },
    #[error("model: {0}")]
    Model(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("task {seed}: {source}")]
    Task { seed: u64, source: Box<Error> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}: {1}")]
    File(String, std::io::Error),
}

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |e| Error::File(path.display().to_string(), e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
