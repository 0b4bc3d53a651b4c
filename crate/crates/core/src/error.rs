use thiserror::Error;

/// Errors raised by the library. Evolution failure (the mutator returning
/// no candidate under the strict policy) is not an error; see
/// [`crate::engine::RunResult::failed`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model error: {0}")]
    Model(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("basis is degenerate: {0}")]
    BasisDegenerate(String),
    #[error("rank-deficient vector set: {0}")]
    RankDeficient(String),
    #[error("mutation set spans no direction")]
    EmptyMutationSet,
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("xi is undefined when <1, u> vanishes")]
    UndefinedXi,
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
