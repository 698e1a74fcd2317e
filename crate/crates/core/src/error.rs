use thiserror::Error;

/// Coarse classification used for CLI exit codes and machine-readable error lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Schema,
    Model,
    Convergence,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Schema => "schema",
            ErrorCategory::Model => "model",
            ErrorCategory::Convergence => "convergence",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 2,
            ErrorCategory::Schema => 3,
            ErrorCategory::Model => 4,
            ErrorCategory::Convergence => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cycle index {cycle} is outside the supported range 1..={max}")]
    CycleOutOfRange { cycle: usize, max: usize },
    #[error("invalid subject {id}: {reason}")]
    InvalidSubject { id: String, reason: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("non-finite likelihood contribution for subject {id}")]
    NonFinite { id: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("optimizer did not converge: {0}")]
    Convergence(String),
    #[error("schema error in {file}: {reason}")]
    Schema { file: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Schema { .. } | Error::InvalidSubject { .. } => ErrorCategory::Schema,
            Error::Convergence(_) => ErrorCategory::Convergence,
            _ => ErrorCategory::Model,
        }
    }

    pub(crate) fn schema(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            reason: reason.into(),
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
