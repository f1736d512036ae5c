//! Atomic report and field writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

/// A report together with the configuration that produced it.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, OutputError> {
    let path = dir.join(name);
    let err = |source| OutputError { path: path.clone(), source };
    fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(&path).map_err(|e| err(e.error))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| OutputError {
        path: dir.join(name),
        source: std::io::Error::other(e),
    })?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}
