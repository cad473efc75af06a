use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("value error at row {row}: {message}")]
    Value { row: usize, message: String },

    #[error("value error: variable `{variable}` has no level `{level}` in the coding schema")]
    UnknownLevel { variable: String, level: String },

    #[error("dataset is empty after filtering ({dropped} rows dropped)")]
    EmptyDataset { dropped: usize },

    #[error("unknown name `{name}` ({context})")]
    UnknownName { name: String, context: String },

    #[error("spec error: {0}")]
    Spec(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("capacity error: {requested} random terms requested, at most {max} supported")]
    Capacity { requested: usize, max: usize },

    #[error("initialization error: log-likelihood at the starting point is not finite ({0})")]
    Initialization(String),

    #[error("optimizer stalled after {iterations} iterations: line search failed (best log-likelihood {best_ll})")]
    OptimizerStall {
        iterations: usize,
        best_ll: f64,
        best_point: Vec<f64>,
    },

    #[error("inference error: information matrix singular in parameters {0:?}")]
    Inference(Vec<String>),

    #[error("layout mismatch: expected {expected} parameters, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
