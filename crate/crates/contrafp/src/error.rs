use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // the io error is part of the message rather than a `source`, so
    // printing the error chain does not repeat it
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: io::Error },
    /// A file whose bytes do not follow its format. `offset` is where the
    /// problem was found.
    #[error("{what} format error at byte {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: u64,
        msg: String,
    },
    /// A malformed file from a parser that does not report positions.
    #[error("malformed {what}: {msg}")]
    Malformed { what: &'static str, msg: String },
    #[error("unsupported {what}: {msg}")]
    Unsupported { what: &'static str, msg: String },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] contrafp_core::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            err: source,
        }
    }
}
