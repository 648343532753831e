//! Run manifests. Each artifact `x` is accompanied by `x.manifest.json`
//! describing the command, configuration, input digests, seed, versions and
//! timing of the run that produced it.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats::checkpoint::FORMAT_VERSION;
use crate::formats::write_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub rlstm: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub versions: Versions,
    pub timing: Timing,
    /// Command-specific results, e.g. the loss history of a training run.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, serde_json::Value>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: BTreeMap<String, String>,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
    threads: usize,
    results: BTreeMap<String, serde_json::Value>,
    started: SystemTime,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, threads: usize) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            seed: None,
            threads,
            results: BTreeMap::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self.config("seed", seed)
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(digest_file(path)?);
        Ok(self)
    }

    pub fn result(&mut self, key: &str, value: serde_json::Value) -> &mut Self {
        self.results.insert(key.to_string(), value);
        self
    }

    pub fn finish(&self, outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            threads: self.threads,
            versions: Versions {
                rlstm: env!("CARGO_PKG_VERSION"),
                checkpoint_format: FORMAT_VERSION,
            },
            timing: Timing {
                started_unix_ms: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
                elapsed_ms: self.clock.elapsed().as_millis(),
            },
            results: self.results.clone(),
        }
    }

    /// Writes one manifest next to every output.
    pub fn write(&self, outputs: &[&Path]) -> Result<RunManifest> {
        let manifest = self.finish(outputs);
        let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize") + "\n";
        for out in outputs {
            write_text(&manifest_path(out), &text)?;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "abc").unwrap();
        let d = digest_file(&p).unwrap();
        assert_eq!(
            d.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn manifests_sit_next_to_each_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("kb.tsv");
        let mut b = ManifestBuilder::new("kb-extract", 1);
        b.seed(3).config("window", 5);
        b.write(&[&out]).unwrap();
        let text = std::fs::read_to_string(manifest_path(&out)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "kb-extract");
        assert_eq!(v["config"]["window"], "5");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["outputs"][0], out.display().to_string());
    }
}
