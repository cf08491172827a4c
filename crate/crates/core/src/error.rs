use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-binary treatment: {count} value(s), first at row {row} ({value})")]
    NonBinaryTreatment { count: usize, row: usize, value: f64 },

    #[error("non-finite {field} value at row {row}")]
    NonFinite { field: &'static str, row: usize },

    #[error("invalid fold count: k={k} with n={n} (need 2 <= k <= n)")]
    InvalidFoldCount { n: usize, k: usize },

    #[error("fold {0} is empty")]
    EmptyFold(usize),

    #[error("fold {fold} has {size} record(s); at least {required} required")]
    FoldTooSmall { fold: usize, size: usize, required: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A zero GDP budget was passed where noise must be calibrated.
    #[error("privacy budget must be positive; use non-private mode for mu = 0")]
    ZeroBudget,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Whether the error comes from the input data rather than the configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::NonBinaryTreatment { .. }
                | Error::NonFinite { .. }
                | Error::EmptyFold(_)
                | Error::FoldTooSmall { .. }
                | Error::Shape(_)
                | Error::Csv(_)
        )
    }

    pub fn is_privacy_violation(&self) -> bool {
        matches!(self, Error::ZeroBudget)
    }
}
