//! Run manifests.
//!
//! Every command run writes a `manifest.json` next to its outputs recording
//! what was executed: the argument list, the full resolved model config, the
//! root seed, the thread count, and a SHA-256 digest of every artifact the
//! run produced. A manifest is enough to re-run the command and check that
//! the statistic outputs come back byte for byte identical; the only fields
//! excluded from that comparison are the wall clock and the manifest's own
//! digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version of the manifest layout itself, bumped on breaking key changes.
pub const MANIFEST_SCHEMA: u32 = 1;

/// File name the manifest is written under, fixed so replay can find it.
pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one command run. Self-describing: the model config is embedded
/// as text, so replay does not depend on the original config file surviving.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    /// Crate version that produced the artifacts.
    pub artifact_version: String,
    /// Argument list as invoked, without the binary name.
    pub command: Vec<String>,
    /// Resolved model configuration, canonical text form.
    pub model_config: String,
    /// Hash of the canonical config; matches the `model_hash` stamped into
    /// the statistic reports themselves.
    pub model_hash: String,
    /// Root seed. All random streams are derived from it by stream id.
    pub seed: u64,
    /// Worker threads requested; 0 means the pool picked its own width.
    pub threads: usize,
    /// Unix seconds at the start of the run. Informational only; replay
    /// comparison skips it.
    pub wall_clock_unix: u64,
    /// Output file name (relative to the run directory) to SHA-256 hex.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: Vec<String>,
        model_config: String,
        model_hash: String,
        seed: u64,
        threads: usize,
    ) -> Self {
        let wall_clock_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            schema: MANIFEST_SCHEMA,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            model_config,
            model_hash,
            seed,
            threads,
            wall_clock_unix,
            outputs: BTreeMap::new(),
        }
    }

    /// Write `bytes` to `dir/name` and record its digest. The directory is
    /// created if missing.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Serialize the manifest itself to `dir/manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "manifest schema {} unsupported, expected {}",
                m.schema, MANIFEST_SCHEMA
            )));
        }
        Ok(m)
    }

    /// Compare recorded output digests against another manifest's. Returns
    /// the names whose digests differ or that are missing on either side.
    pub fn diff_outputs(&self, other: &RunManifest) -> Vec<String> {
        let mut bad: Vec<String> = Vec::new();
        for (name, digest) in &self.outputs {
            match other.outputs.get(name) {
                Some(d) if d == digest => {}
                _ => bad.push(name.clone()),
            }
        }
        for name in other.outputs.keys() {
            if !self.outputs.contains_key(name) {
                bad.push(name.clone());
            }
        }
        bad.sort();
        bad.dedup();
        bad
    }
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's contents as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
