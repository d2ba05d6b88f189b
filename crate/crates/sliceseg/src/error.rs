//! Crate-wide error type.

/// Everything that can go wrong across the tensor engine, the model, data
/// files, and training. Variants are coarse on purpose: callers match on the
/// class of failure (shape bug vs. bad config vs. numeric blow-up), while the
/// message carries the specifics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was handed tensors whose shapes cannot be combined.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition other than a shape was violated (bad argument value,
    /// out-of-range label, uninitialized statistics, ...).
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },

    /// NaN or infinity showed up where finite values are required.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Bad run configuration: unknown key, unparsable value, missing file.
    #[error("config error: {0}")]
    Config(String),

    /// A binary file (checkpoint or sample) failed structural validation.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// An I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { op, detail: detail.into() }
    }

    pub fn non_finite(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NonFinite { op, detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
