use thiserror::Error;

/// Errors surfaced by the library.
///
/// The CLI maps these onto its exit-code contract: `Model`, `Parse` and
/// `Input` are schema/usage failures, `Numerical` is a numerical abort and
/// everything else is a runtime fault.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model validation failed: {0}")]
    Model(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by malformed inputs rather than runtime faults.
    pub fn is_schema(&self) -> bool {
        matches!(self, Error::Model(_) | Error::Parse(_) | Error::Input(_) | Error::Data(_))
    }
}
