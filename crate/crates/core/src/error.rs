use thiserror::Error;

/// Errors surfaced by the library. Numeric problems are reported, never
/// silently propagated as NaN/Inf.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("invalid parameter {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("format error in {file} at offset {offset}: {detail}")]
    Format {
        file: String,
        offset: u64,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
