use thiserror::Error;

/// Errors raised by the selection library.
///
/// Every variant maps onto one of three process exit classes (see [`Error::class`]):
/// configuration/schema problems, numerical-invariant failures, and theorem-soundness
/// violations detected by the verification suites.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid problem: {0}")]
    Invalid(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("index {0} already selected")]
    DuplicateIndex(usize),

    #[error("budget k={k} out of range 1..={n}")]
    Budget { k: usize, n: usize },

    #[error("combinatorial cap exceeded: C({n},{k}) = {count} > {cap}")]
    CapExceeded {
        n: usize,
        k: usize,
        count: f64,
        cap: f64,
    },

    #[error("{0} not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("numerical invariant failed: {0}")]
    Numerical(String),

    #[error("theorem violation: {0}")]
    TheoremViolation(String),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Theorem,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical(_) | Error::NotPositiveDefinite(_) => ErrorClass::Numeric,
            Error::TheoremViolation(_) => ErrorClass::Theorem,
            _ => ErrorClass::Config,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
