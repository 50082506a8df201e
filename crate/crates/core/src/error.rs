use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("infeasible bounds: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment row {row} failed")]
    Experiment {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing prerequisite artifact {path}; run `{stage}` first")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("{failed} of {total} runs failed; partial outputs kept")]
    PartialFailure { failed: usize, total: usize },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
