//! Stage reports, content hashes and the run-directory lock.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = std::fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    sha256_bytes(&serde_json::to_vec(value).expect("serializable"))
}

/// Digest of a name → hash map; order independent because the map is sorted.
pub fn digest_of(map: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in map {
        hasher.update(k.as_bytes());
        hasher.update([0]);
        hasher.update(v.as_bytes());
        hasher.update([b'\n']);
    }
    hex::encode(hasher.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: Status,
    pub seed: u64,
    /// Named input hashes; upstream stages appear as `stage:<name>` with
    /// their output digest.
    pub inputs: BTreeMap<String, String>,
    pub input_digest: String,
    /// Output files relative to the run directory, with their hashes.
    pub outputs: BTreeMap<String, String>,
    pub output_digest: String,
    pub elapsed_ms: u128,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub details: serde_json::Value,
}

impl StageReport {
    pub fn path(run_dir: &Path, stage: &str) -> PathBuf {
        run_dir.join("reports").join(format!("{stage}.json"))
    }

    pub fn load(run_dir: &Path, stage: &str) -> Option<Self> {
        let text = std::fs::read_to_string(Self::path(run_dir, stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, run_dir: &Path) -> anyhow::Result<()> {
        let path = Self::path(run_dir, &self.stage);
        std::fs::create_dir_all(path.parent().unwrap())?;
        write_json(&path, self)
    }

    /// True when the report succeeded for the same inputs and every output
    /// still has the recorded hash.
    pub fn is_current(&self, run_dir: &Path, input_digest: &str) -> bool {
        self.status == Status::Ok
            && self.input_digest == input_digest
            && self
                .outputs
                .iter()
                .all(|(rel, hash)| sha256_file(&run_dir.join(rel)).is_ok_and(|h| &h == hash))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = ".lock";

    pub fn acquire(run_dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        let path = run_dir.join(Self::FILE);
        let mut file = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "run directory {} is locked by another process (remove {} if it is stale)",
                    run_dir.display(),
                    path.display()
                )
            })?;
        writeln!(file, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
