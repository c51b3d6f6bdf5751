use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Chunk offsets that cannot be mapped onto the document's tokens.
    #[error("alignment error in document `{doc_id}` for chunk [{begin}, {end}): {reason}")]
    Alignment {
        doc_id: String,
        begin: usize,
        end: usize,
        reason: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("invalid pattern `{pattern}`: {message}")]
    Pattern { pattern: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unmapped label `{0}`")]
    UnmappedLabel(String),

    #[error("no gold rows in the evaluated classes")]
    EmptyEval,

    #[error("benchmark error: {0}")]
    Bench(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
