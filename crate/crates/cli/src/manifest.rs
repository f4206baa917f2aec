//! Run manifests: what a command read, wrote and with which seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of the command's arguments serialized as JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub elapsed_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Files a command touched, collected while it runs.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    /// Default manifest location.
    pub manifest_path: PathBuf,
}

impl Outcome {
    pub fn new(manifest_path: PathBuf) -> Self {
        Outcome {
            manifest_path,
            ..Default::default()
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(p.into());
        self
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(p.into());
        self
    }

    pub fn seed(&mut self, name: &str, v: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), v);
        self
    }
}

/// `<file>.manifest.json` beside a file output, `manifest.json` inside a directory output.
pub fn manifest_beside(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub fn build_manifest(command: &str, config: serde_json::Value, outcome: &Outcome, elapsed_ms: u128) -> Result<RunManifest> {
    let canonical = serde_json::to_vec(&config)?;
    Ok(RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(&canonical),
        config,
        seeds: outcome.seeds.clone(),
        inputs: outcome.inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        outputs: outcome.outputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        elapsed_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("rooftop-manifest-{}", std::process::id()));
        let p = dir.join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.join("a.txt.tmp").exists());
        let d = digest_file(&p).unwrap();
        assert_eq!(d.sha256, sha256_hex(b"two"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn manifest_locations() {
        assert_eq!(manifest_beside(Path::new("x/f.csv"), false), PathBuf::from("x/f.csv.manifest.json"));
        assert_eq!(manifest_beside(Path::new("x/d"), true), PathBuf::from("x/d/manifest.json"));
    }
}
