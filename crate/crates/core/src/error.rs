use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report. Variants mirror the error classes of
/// each pipeline stage so callers (and the CLI exit-code mapping) can tell
/// validation problems apart from runtime ones.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("labeling error: {0}")]
    Labeling(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in {block}: {detail}")]
    Numeric { block: String, detail: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("run {run}, fold {fold}: {source}")]
    Fold {
        run: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than by
    /// a failure during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Config(_)
            | Error::Shape(_)
            | Error::Labeling(_)
            | Error::Json(_) => true,
            Error::Fold { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
