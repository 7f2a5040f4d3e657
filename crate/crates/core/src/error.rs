use std::path::Path;

/// Errors raised anywhere in the engine.
///
/// Every variant maps to a short machine-parsable category via
/// [`Error::category`], which the command-line front end prints on failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at {path}:{line}: {detail}")]
    Format { path: String, line: usize, detail: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Lookup(_) => "lookup",
            Error::Sampling(_) => "sampling",
            Error::Probe(_) => "probe",
            Error::Generation(_) => "generation",
            Error::Checkpoint(_) => "checkpoint",
            Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
