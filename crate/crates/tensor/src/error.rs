use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("convolution configuration error: {0}")]
    Config(String),
    #[error("{0} is not a scalar (shape {1:?})")]
    NotScalar(&'static str, Vec<usize>),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;
