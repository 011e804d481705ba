//! File helpers. Every output is written to a temporary sibling and renamed
//! into place, so a failed run never leaves a partial file behind.

use std::io::Write;
use std::path::Path;

use crate::error::{NaitError, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| NaitError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| NaitError::format(None, format!("{} is not UTF-8: {e}", path.display())))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".nait-")
        .tempfile_in(dir)
        .map_err(|e| NaitError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| NaitError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| NaitError::io(path, e))?;
    tmp.persist(path).map_err(|e| NaitError::io(path, e.error))?;
    Ok(())
}
