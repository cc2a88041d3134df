use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient batches: need at least {needed}, have {found}")]
    InsufficientBatches { needed: usize, found: usize },

    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("singular covariance: eigenvalue {eigenvalue:e} at index {index}")]
    Singular { index: usize, eigenvalue: f64 },

    #[error("data stream exhausted after {consumed} of {requested} observations")]
    StreamExhausted { consumed: u64, requested: u64 },

    #[error("batch size overflow: c*n^beta = {0} is not representable")]
    BatchSizeOverflow(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("data error at row {row}, column '{column}': {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the input data rather than the configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::MissingColumn(_)
                | Error::StreamExhausted { .. }
                | Error::Degenerate(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
