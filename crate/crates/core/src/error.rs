use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("candidate `{0}` is constant on the dose grid; no contrast can detect it")]
    DegenerateShape(String),

    #[error("every candidate model is flat; the contrast matrix would be empty")]
    EmptyContrasts,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("reference set has {count} sequences, above the enumeration cap of {cap}")]
    EnumerationTooLarge { count: String, cap: u64 },

    #[error("arm {arm} has {size} patients; at least 2 are needed for a variance estimate")]
    DegenerateVariance { arm: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
