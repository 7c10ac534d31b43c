//! Crate-wide error type.

use crate::generate::GenerationTrace;

/// Errors produced by the pipeline and its subsystems.
#[derive(Debug, thiserror::Error)]
pub enum RagError {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An inference backend could not be reached or returned a failure
    /// after exhausting retries.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// A line-oriented input file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A uniqueness constraint (document id, chunk id) was violated.
    #[error("conflict: {0}")]
    Conflict(String),

    /// The requested operation is inconsistent with the configuration
    /// or a required component is missing.
    #[error("configuration error: {0}")]
    Config(String),

    /// Persisted or in-memory data violates a structural invariant.
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// Training data cannot support the requested fit.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A single sample could not be labeled; the caller may skip it.
    #[error("labeling failed: {0}")]
    Labeling(String),

    /// The generation pipeline failed mid-query; carries everything
    /// produced up to the failure point.
    #[error("pipeline failed: {message}")]
    Pipeline {
        message: String,
        trace: Box<GenerationTrace>,
    },

    /// Filesystem failure with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RagError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RagError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, RagError>;
