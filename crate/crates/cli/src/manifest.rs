//! Per-stage provenance records. A manifest names every input and output by
//! content hash plus the seeds and tool version in play, which is what makes
//! a rerun checkable byte-for-byte. No timestamps: manifests themselves must
//! reproduce.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::FormatError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    /// Path relative to the artifact directory (or a bare name for files
    /// outside it, like the config).
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub format_version: u32,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    let mut file = fs::File::open(path).map_err(|e| FormatError::File {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0_u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| FormatError::File {
            path: path.display().to_string(),
            source: e,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(to_hex(&hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    to_hex(&hasher.finalize())
}

fn to_hex(digest: &[u8]) -> String {
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Collects (display name, path) pairs into hashed entries.
pub fn hash_files(entries: &[(&str, &Path)]) -> Result<Vec<FileHash>, FormatError> {
    entries
        .iter()
        .map(|(name, path)| {
            Ok(FileHash { name: String::from(*name), sha256: sha256_file(path)? })
        })
        .collect()
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), FormatError> {
    let path = dir.join(format!("manifest_{}.json", manifest.stage));
    crate::io::write_json(&path, manifest)
}

pub fn new_manifest(stage: &str, seeds: &[(&str, u64)]) -> Manifest {
    Manifest {
        stage: String::from(stage),
        tool_version: String::from(env!("CARGO_PKG_VERSION")),
        format_version: FORMAT_VERSION,
        seeds: seeds.iter().map(|(k, v)| (String::from(*k), *v)).collect(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        std::fs::write(&a, "same bytes").unwrap();
        std::fs::write(&b, "same bytes").unwrap();
        assert_eq!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());

        std::fs::write(&b, "other bytes").unwrap();
        assert_ne!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());
        // Pinned so the format cannot drift silently.
        assert_eq!(
            sha256_file(&a).unwrap(),
            "58100dc8fc06562ce3e578231dc948e083520ee49c4b4ee5a5a28bb4b4003feb"
        );
    }

    #[test]
    fn manifests_render_reproducibly() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("x.jsonl");
        std::fs::write(&data, "{}\n").unwrap();
        let mut manifest = new_manifest("demo", &[("split", 7)]);
        manifest.outputs = hash_files(&[("x.jsonl", &data)]).unwrap();
        write_manifest(dir.path(), &manifest).unwrap();
        let first = std::fs::read(dir.path().join("manifest_demo.json")).unwrap();
        write_manifest(dir.path(), &manifest).unwrap();
        let second = std::fs::read(dir.path().join("manifest_demo.json")).unwrap();
        assert_eq!(first, second);
        let back: Manifest = crate::io::read_json(&dir.path().join("manifest_demo.json")).unwrap();
        assert_eq!(back, manifest);
    }
}
