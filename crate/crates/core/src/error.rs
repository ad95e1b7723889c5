use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("degenerate shape: {0}")]
    Degenerate(String),
    #[error("rppg: {0}")]
    Rppg(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
