//! Run manifests written next to every artifact.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct Versions {
    hdrtv: &'static str,
    dataset_format: u16,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    /// sha256 of the canonical JSON of the effective arguments.
    config_hash: String,
    config: &'a serde_json::Value,
    seed: Option<u64>,
    deterministic: bool,
    versions: Versions,
    outputs: Vec<String>,
    created_unix: u64,
}

/// Manifest path for an artifact: `<dir>/manifest.json` for directories,
/// `<file>.manifest.json` otherwise.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("manifest.json")
    } else {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn config_hash(config: &serde_json::Value) -> String {
    // Field order is fixed by the argument structs, so the text is canonical.
    let text = serde_json::to_string(config).expect("json values serialize");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub seed: Option<u64>,
    pub deterministic: bool,
}

/// Write the manifest for `primary`, listing every output.
pub fn write_manifest<A: Serialize>(info: &RunInfo, args: &A, primary: &Path, outputs: &[PathBuf]) -> CliResult<()> {
    let config = serde_json::to_value(args).map_err(|e| CliError::Config(format!("arguments: {e}")))?;
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let m = Manifest {
        command: info.command,
        config_hash: config_hash(&config),
        config: &config,
        seed: info.seed,
        deterministic: info.deterministic,
        versions: Versions {
            hdrtv: env!("CARGO_PKG_VERSION"),
            dataset_format: hdrtv_core::datagen::DATASET_VERSION,
        },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        created_unix,
    };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    hdrtv_core::io_util::write_bytes_atomic(&manifest_path(primary), text.as_bytes())?;
    Ok(())
}
