use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("config {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(#[from] dsgee_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 usage, 2 data validation, 3 numerical failure of the whole run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Io { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(e) => match e {
                dsgee_core::Error::LinkMismatch(_) | dsgee_core::Error::InvalidInput(_) => 2,
                _ => 3,
            },
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}: empty file or missing header")]
    Empty(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("unbalanced panel: expected {expected} rows per cluster; offending clusters: {}", clusters.join(", "))]
    UnbalancedPanel { expected: usize, clusters: Vec<String> },

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumericCell { row: usize, column: String, value: String },

    #[error("cluster `{cluster}` has time index {time} more than once")]
    DuplicateTime { cluster: String, time: i64 },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("malformed csv: {0}")]
    Csv(String),
}

pub type CliResult<T> = Result<T, CliError>;
