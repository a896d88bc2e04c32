use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input; `line` is 1-based when the source is line-oriented.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    #[error("unknown CWE id: {0}")]
    UnknownCwe(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training data error: {0}")]
    TrainingData(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line: Some(line),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wraps the error with the name of the component (expert category,
    /// router) that produced it.
    pub fn in_component(self, component: &str) -> Self {
        match self {
            Error::TrainingData(m) => Error::TrainingData(format!("{component}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{component}: {m}")),
            Error::Diverged { epoch, message } => Error::Diverged {
                epoch,
                message: format!("{component}: {message}"),
            },
            Error::Config(m) => Error::Config(format!("{component}: {m}")),
            other => other,
        }
    }
}
