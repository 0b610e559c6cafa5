use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MaihdaError>;

#[derive(Debug, Error)]
pub enum MaihdaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("missing column '{0}' in data header")]
    MissingColumn(String),

    #[error("row {row}, column '{column}': unknown category '{label}'")]
    UnknownCategory {
        row: usize,
        column: String,
        label: String,
    },

    #[error("row {row}, column '{column}': outcome '{value}' is not a finite number")]
    NonNumericOutcome {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("need more strata than fixed-effect columns (J = {strata}, p = {columns})")]
    TooFewStrata { strata: usize, columns: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MaihdaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => 1,
            Self::Io { .. }
            | Self::MissingColumn(_)
            | Self::UnknownCategory { .. }
            | Self::NonNumericOutcome { .. }
            | Self::Csv(_)
            | Self::InvalidInput(_)
            | Self::Json(_) => 2,
            Self::RankDeficient { .. } | Self::TooFewStrata { .. } | Self::Numerical(_) => 3,
        }
    }
}
