//! Run manifests: every command writes one next to its outputs, carrying
//! enough resolved state to re-execute the run bit-exactly (`replay`).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use waveguard::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    /// Canonical command name, e.g. "train" or "eval-fidelity".
    pub command: String,
    pub threads: usize,
    /// Fully resolved arguments; `replay` deserializes these and runs the
    /// command again without re-consulting config files or defaults.
    pub args: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// SHA-256 of every checkpoint read or written, keyed by path.
    pub checkpoint_sha256: BTreeMap<String, String>,
    pub stats: BTreeMap<String, serde_json::Value>,
    pub timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, threads: usize, args: impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            threads,
            args: serde_json::to_value(args)
                .map_err(|e| Error::Format(format!("manifest args: {e}")))?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoint_sha256: BTreeMap::new(),
            stats: BTreeMap::new(),
            timings_seconds: BTreeMap::new(),
        })
    }

    pub fn record_inputs<P: AsRef<Path>>(&mut self, paths: &[P]) {
        self.inputs
            .extend(paths.iter().map(|p| p.as_ref().display().to_string()));
    }

    pub fn record_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn record_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let digest = sha256_file(path)?;
        self.checkpoint_sha256
            .insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) {
        if let Ok(v) = serde_json::to_value(value) {
            self.stats.insert(key.to_string(), v);
        }
    }

    pub fn timing(&mut self, key: &str, seconds: f64) {
        self.timings_seconds.insert(key.to_string(), seconds);
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::Input(format!("{}: not a run manifest: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
