use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("lookup index {index} out of range for table `{table}` with {size} rows")]
    Lookup {
        table: String,
        index: usize,
        size: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero variance in column `{0}`")]
    ZeroVariance(String),

    #[error("unseen level `{level}` for feature `{feature}`")]
    UnseenLevel { feature: String, level: String },

    #[error("GLM solver did not converge after {iterations} iterations (deviance {deviance})")]
    NotConverged { iterations: usize, deviance: f64 },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("schema mismatch: expected hash {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("wrong model kind: {0}")]
    WrongKind(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerics (divergence, non-convergence) as
    /// opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NotConverged { .. } | Error::RankDeficient(_) | Error::Tolerance(_)
        )
    }

    pub(crate) fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
