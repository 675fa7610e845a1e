//! Report file plumbing: provenance headers and deterministic writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Tool version, config hash, and seed; prepended to every report so runs
/// are attributable and reproducible.
pub fn provenance(config_json: &str, seed: u64) -> Value {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    let digest = hasher.finalize();
    let hash: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "seed": seed,
    })
}

pub fn write_file(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Sanitize a run label into a file-name chunk.
pub fn slug(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() {
                        c.to_ascii_lowercase()
                    } else {
                        '_'
                    }
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}
