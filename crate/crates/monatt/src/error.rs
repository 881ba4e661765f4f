use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Index outside the valid range of a tensor axis or label vocabulary.
    #[error("index out of range in {op}: {detail}")]
    Bounds { op: &'static str, detail: String },

    /// A softmax or latent distribution was requested over an empty support.
    /// During search this marks a dead hypothesis, not a fatal condition.
    #[error("empty support: {0}")]
    EmptySupport(String),

    /// An API contract was violated (e.g. backward on a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value became NaN or infinite where a finite number is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A data/model/search configuration cannot be satisfied
    /// (e.g. more labels than encoder frames under strict monotonicity).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Beam search lost every hypothesis.
    #[error("empty beam: {0}")]
    EmptyBeam(String),

    /// A structured text file failed to parse.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// File carries a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected}) in {path}")]
    UnsupportedVersion {
        path: String,
        found: String,
        expected: String,
    },

    /// Bad run configuration (unknown key, invalid value, missing file).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn bounds(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Bounds {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable tag for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Bounds { .. } => "bounds",
            Error::EmptySupport(_) => "empty-support",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non-finite",
            Error::Infeasible(_) => "infeasible",
            Error::EmptyBeam(_) => "empty-beam",
            Error::Parse { .. } => "parse",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
