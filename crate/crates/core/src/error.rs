use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, empty masks).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("finite-difference oracle failed: {0}")]
    Oracle(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns `Err(Error::Contract(..))` from the enclosing function unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        {
            let holds: bool = $cond;
            if !holds {
                return Err($crate::error::Error::Contract(format!($($arg)+)));
            }
        }
    };
}
pub(crate) use ensure;

pub(crate) fn file_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.display().to_string(),
        source,
    }
}
