//! Run manifest: SHA-256 digests of every artifact in a run directory.
//!
//! The manifest anchors reproducibility checks. Volatile files (the manifest
//! itself and wall-clock timings) are excluded so two runs of the same config
//! can be compared by comparing their manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TIMINGS_NAME: &str = "timings.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path -> lowercase hex SHA-256 of the file contents.
    pub files: BTreeMap<String, String>,
}

fn io_stage(e: std::io::Error) -> HarnessError {
    HarnessError::Stage {
        stage: "manifest".into(),
        source: Box::new(e),
    }
}

fn digest_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(io_stage)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn walk(root: &Path, dir: &Path, files: &mut BTreeMap<String, String>) -> Result<(), HarnessError> {
    for entry in std::fs::read_dir(dir).map_err(io_stage)? {
        let path = entry.map_err(io_stage)?.path();
        if path.is_dir() {
            walk(root, &path, files)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walk stays under the root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_NAME || rel == TIMINGS_NAME {
            continue;
        }
        files.insert(rel, digest_file(&path)?);
    }
    Ok(())
}

impl Manifest {
    /// Digest every file under `root`, skipping the volatile entries.
    pub fn capture(root: &Path) -> Result<Manifest, HarnessError> {
        let mut files = BTreeMap::new();
        walk(root, root, &mut files)?;
        Ok(Manifest { files })
    }

    pub fn write(&self, root: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(root.join(MANIFEST_NAME), json).map_err(io_stage)
    }

    pub fn read(root: &Path) -> Result<Manifest, HarnessError> {
        let path = root.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(io_stage)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Recompute digests and report mismatches as `(path, reason)` pairs.
    pub fn verify(&self, root: &Path) -> Result<Vec<(String, String)>, HarnessError> {
        let current = Manifest::capture(root)?;
        let mut problems = Vec::new();
        for (path, digest) in &self.files {
            match current.files.get(path) {
                None => problems.push((path.clone(), "missing".to_string())),
                Some(d) if d != digest => problems.push((path.clone(), "changed".to_string())),
                Some(_) => {}
            }
        }
        for path in current.files.keys() {
            if !self.files.contains_key(path) {
                problems.push((path.clone(), "unexpected".to_string()));
            }
        }
        problems.sort();
        Ok(problems)
    }
}
