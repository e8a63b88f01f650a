use thiserror::Error;

/// Hard errors of the harness. Per-point solver failures are not errors:
/// they are recorded in the status column of the affected rows.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error in {origin}: {message}")]
    Config { origin: String, message: String },

    #[error("invalid sweep spec `{name}`: {reason}")]
    Spec { name: String, reason: String },

    #[error("column `{column}` in row {row}: {reason}")]
    Column { column: String, row: usize, reason: String },

    #[error("{} simulation rows have no replica counterpart: {}", .0.len(), .0.join("; "))]
    UnmatchedRows(Vec<String>),

    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),

    #[error(transparent)]
    Core(#[from] kd_core::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
