//! JSON run manifests and atomic file replacement.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub code_version: String,
    pub generator: String,
    pub row_count: usize,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Kind-specific summaries (scale reports, test statistics).
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, master_seed: u64, threads: usize, started_unix_ms: u128) -> Self {
        Self {
            config: config.clone(),
            master_seed,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            generator: jacspec::randomness::GENERATOR_NAME.into(),
            row_count: 0,
            threads,
            started_unix_ms,
            finished_unix_ms: 0,
            summary: serde_json::Value::Null,
        }
    }
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes through a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f(&mut file)?;
        file.flush()?;
        file.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    write_atomic(&manifest_path(out), |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}
