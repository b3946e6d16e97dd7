//! Run manifests: a config snapshot, per-artifact SHA-256 checksums and a
//! content hash over those checksums. Stage timings are recorded but kept out
//! of the hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::report::write_json;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub content_hash: String,
    pub timings_seconds: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    /// Checksum `artifacts` (paths relative to `root`), sorted by path.
    pub fn build(
        command: &str,
        config: &ExperimentConfig,
        root: &Path,
        artifacts: &[String],
        timings_seconds: BTreeMap<String, f64>,
    ) -> CliResult<Self> {
        let mut paths = artifacts.to_vec();
        paths.sort();
        paths.dedup();
        let artifacts = paths
            .into_iter()
            .map(|p| {
                Ok(Artifact {
                    sha256: sha256_file(&root.join(&p))?,
                    path: p,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let listing: String = artifacts.iter().map(|a| format!("{}\t{}\n", a.path, a.sha256)).collect();
        Ok(Self {
            format_version: MANIFEST_FORMAT_VERSION,
            command: command.to_string(),
            config: config.clone(),
            content_hash: sha256_hex(listing.as_bytes()),
            artifacts,
            timings_seconds,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn content_hash_ignores_timings_and_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "1").unwrap();
        std::fs::write(dir.path().join("b.txt"), "2").unwrap();
        let cfg = ExperimentConfig::default();
        let m1 = RunManifest::build("x", &cfg, dir.path(), &["a.txt".into(), "b.txt".into()], BTreeMap::new()).unwrap();
        let mut t = BTreeMap::new();
        t.insert("sft".to_string(), 1.5);
        let m2 = RunManifest::build("x", &cfg, dir.path(), &["b.txt".into(), "a.txt".into()], t).unwrap();
        assert_eq!(m1.content_hash, m2.content_hash);
        assert_eq!(m1.artifacts, m2.artifacts);
    }
}
