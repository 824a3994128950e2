use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dtype mismatch: {0}")]
    DType(String),

    #[error("matrix is not Hermitian at batch index {index:?} (defect {defect:.3e})")]
    NotHermitian { index: Vec<usize>, defect: f64 },

    #[error("matrix is not positive definite at batch index {index:?}")]
    NotPositiveDefinite { index: Vec<usize> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training aborted: {reason}")]
    Aborted {
        reason: String,
        report: Box<crate::trainer::TrainReport>,
    },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
