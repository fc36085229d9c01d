use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("engine error: {0}")]
    Engine(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 usage (handled by the argument parser), 3 data,
    /// 4 training, 5 report.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Checkpoint(_) | Error::Shape(_) | Error::Io(_) => 3,
            Error::Engine(_) | Error::Training(_) => 4,
            Error::Report(_) => 5,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
