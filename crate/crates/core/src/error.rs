use thiserror::Error;

/// Errors produced by the disaggregation library.
///
/// `Config`, `Shape`, `Domain` and `Load` are caller errors (bad inputs or
/// files); `Numerical` signals a diverged computation (NaN/Inf loss).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("load error for sample '{id}': {msg}")]
    Load { id: String, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn load(id: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Load {
            id: id.into(),
            msg: msg.into(),
        }
    }
}
