use std::path::PathBuf;

use thiserror::Error;

use crate::ids::EncounterId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("temporal bounds error: {0}")]
    TemporalBounds(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error in {file} line {line}: {message}")]
    DataAt {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("encounter {0}: missing admission/discharge metadata")]
    MissingMetadata(EncounterId),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("task mapping error: task {task} not in 0..{n_tasks}")]
    TaskMapping { task: usize, n_tasks: usize },

    #[error("inclusion violation: encounter {encounter} has {rows} rows, {required} required")]
    InclusionViolation {
        encounter: EncounterId,
        rows: usize,
        required: usize,
    },

    #[error("degenerate labels: {0}")]
    DegenerateLabel(String),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unknown feature group `{0}`")]
    Taxonomy(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Like [`Error::io`], but a missing file becomes [`Error::MissingInput`].
    pub fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingInput(path);
        }
        Error::Io { path, source }
    }

    /// Process exit status for the CLI: 2 configuration, 3 missing input,
    /// 4 malformed data, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::TemporalBounds(_) | Error::Taxonomy(_) => 2,
            Error::MissingInput(_) => 3,
            Error::Data(_)
            | Error::DataAt { .. }
            | Error::Schema(_)
            | Error::MissingMetadata(_)
            | Error::InclusionViolation { .. }
            | Error::Json(_)
            | Error::Csv(_) => 4,
            _ => 1,
        }
    }
}
