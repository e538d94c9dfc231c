//! Run manifests: every artifact-producing command records what ran,
//! with which configuration and seeds, and hashes of its inputs, so a
//! report can be traced back and regenerated bit-identically.

use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub checkpoint_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub metrics: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn begin(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::Value::Null,
            seed,
            checkpoint_sha256: None,
            dataset_sha256: None,
            metrics: serde_json::Value::Null,
            started_unix: now(),
            finished_unix: 0,
        }
    }

    /// Stamps the completion time and writes the manifest as pretty JSON.
    pub fn write(mut self, path: &Path) -> io::Result<()> {
        self.finished_unix = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serialization cannot fail");
        std::fs::write(path, text)
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
