//! File formats, WAV IO, training configuration and evaluation on top of
//! [`contrafp_core`], plus the `contrafp` command line.

use std::fs::File;
use std::path::Path;

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod formats;
pub mod wav;

pub use contrafp_core as core;
pub use error::{Error, Result};

/// Writes through a temporary file in the destination directory and renames
/// it into place only when `write` succeeds, so a failed write never leaves
/// a partial file behind.
pub fn atomic_write(path: &Path, write: impl FnOnce(&File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    write(tmp.as_file())?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
