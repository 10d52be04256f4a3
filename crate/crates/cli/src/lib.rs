//! Command-line front end for the `ionaddr` simulator.
//!
//! Every command takes a scenario file, writes its data files into the
//! output directory and returns a JSON-serializable report.

use std::path::{Path, PathBuf};

pub mod commands;
pub mod scenario;

pub use scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ionaddr::Error> for CliError {
    fn from(e: ionaddr::Error) -> Self {
        use ionaddr::Error as E;
        match e {
            E::Io(_) | E::Json(_) | E::Image(_) => CliError::Io(e.to_string()),
            E::AmbiguousRabi(_) | E::InsufficientData(_) => CliError::Numeric(e.to_string()),
            E::MatrixEntry { ref source, .. } if matches!(**source, E::Normalization { .. }) => {
                CliError::Numeric(e.to_string())
            }
            E::Normalization { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Writes `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    use std::io::Write;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target)
        .map_err(|e| CliError::Io(format!("{}: {}", target.display(), e.error)))?;
    Ok(target)
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(dir, name, text.as_bytes())
}
