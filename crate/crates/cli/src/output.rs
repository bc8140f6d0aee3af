//! Atomic file output and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes through a temp file in the same directory, then renames it into
/// place, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub spec_path: PathBuf,
    pub seed: Option<u64>,
    pub replications: Option<u64>,
    pub out_dir: PathBuf,
    pub tool_version: &'static str,
    /// The effective flags, so the run can be repeated.
    pub args: serde_json::Value,
    pub wall_clock_seconds: f64,
}

pub const MANIFEST: &str = "manifest.json";

pub fn write_manifest(m: &RunManifest) -> Result<(), CliError> {
    write_json(&m.out_dir.join(MANIFEST), m)
}
