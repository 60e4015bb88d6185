use thiserror::Error;

/// Errors surfaced by the tensor engine, model layers and data pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// Dimension or shape conflict between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// NaN/Inf detected or a numeric contract violated.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed file content (image header, checkpoint, config).
    #[error("format error: {0}")]
    Format(String),

    /// Bad run configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset layout or content problems.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
