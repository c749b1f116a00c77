//! Digest-tracked experiment artifacts.
//!
//! Every intermediate file an experiment writes is registered in
//! `artifacts.json` with two digests: the digest of the *inputs* that
//! produced it (used to decide whether a rerun may reuse it) and the
//! digest of its *content* (used to detect corruption). Report assembly
//! verifies content digests and refuses to regenerate anything silently.
//!
//! Setting the `POISONLAB_CACHE` environment variable points at a
//! content-addressed cache shared across output directories: artifacts
//! land there keyed by input digest and later runs copy them back out
//! instead of recomputing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "POISONLAB_CACHE";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub input_digest: String,
    pub content_digest: String,
}

/// The artifact ledger for one output directory.
#[derive(Debug, Default)]
pub struct ArtifactStore {
    root: PathBuf,
    entries: BTreeMap<String, ArtifactEntry>,
    cache_root: Option<PathBuf>,
}

impl ArtifactStore {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: BTreeMap::new(),
            cache_root: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        })
    }

    /// Open an existing directory, loading its ledger if present.
    pub fn open(root: &Path) -> Result<Self> {
        let mut store = Self::create(root)?;
        let ledger = root.join("artifacts.json");
        if ledger.exists() {
            let content = std::fs::read_to_string(&ledger).map_err(|e| Error::io(&ledger, e))?;
            store.entries = serde_json::from_str(&content)
                .map_err(|e| Error::Artifact(format!("artifacts.json: {e}")))?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn abs(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Try to satisfy the artifact at `rel` without recomputing: the
    /// existing file is kept when both digests check out, or the shared
    /// cache is consulted. Returns whether the artifact is now in place.
    pub fn try_reuse(&mut self, rel: &str, input_digest: &str) -> Result<bool> {
        let path = self.abs(rel);
        if let Some(entry) = self.entries.get(rel) {
            if entry.input_digest == input_digest
                && path.exists()
                && file_digest(&path)? == entry.content_digest
            {
                return Ok(true);
            }
        }
        if let Some(bytes) = self.cache_lookup(input_digest)? {
            self.write_entry(rel, input_digest, &bytes)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Record freshly computed bytes for `rel` (and feed the cache).
    pub fn put(&mut self, rel: &str, input_digest: &str, bytes: &[u8]) -> Result<()> {
        self.cache_insert(input_digest, bytes)?;
        self.write_entry(rel, input_digest, bytes)
    }

    /// Reuse or compute the artifact at `rel` for the given input digest.
    pub fn materialize(
        &mut self,
        rel: &str,
        input_digest: &str,
        compute: impl FnOnce() -> Result<Vec<u8>>,
    ) -> Result<()> {
        if self.try_reuse(rel, input_digest)? {
            return Ok(());
        }
        let bytes = compute()?;
        self.put(rel, input_digest, &bytes)
    }

    fn write_entry(&mut self, rel: &str, input_digest: &str, bytes: &[u8]) -> Result<()> {
        let path = self.abs(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.entries.insert(
            rel.to_string(),
            ArtifactEntry {
                input_digest: input_digest.to_string(),
                content_digest: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    fn cache_path(&self, input_digest: &str) -> Option<PathBuf> {
        self.cache_root.as_ref().map(|c| c.join(input_digest))
    }

    fn cache_lookup(&self, input_digest: &str) -> Result<Option<Vec<u8>>> {
        match self.cache_path(input_digest) {
            Some(p) if p.exists() => {
                Ok(Some(std::fs::read(&p).map_err(|e| Error::io(&p, e))?))
            }
            _ => Ok(None),
        }
    }

    fn cache_insert(&self, input_digest: &str, bytes: &[u8]) -> Result<()> {
        if let Some(p) = self.cache_path(input_digest) {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Read an artifact back, insisting its content digest still matches
    /// the ledger. Corruption is a hard error; nothing regenerates here.
    pub fn read_verified(&self, rel: &str) -> Result<Vec<u8>> {
        let entry = self
            .entries
            .get(rel)
            .ok_or_else(|| Error::Artifact(format!("missing artifact {rel:?}")))?;
        let path = self.abs(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.content_digest {
            return Err(Error::Artifact(format!(
                "artifact {rel:?} does not match its recorded digest"
            )));
        }
        Ok(bytes)
    }

    pub fn entries(&self) -> &BTreeMap<String, ArtifactEntry> {
        &self.entries
    }

    /// Persist the ledger.
    pub fn save(&self) -> Result<()> {
        let path = self.root.join("artifacts.json");
        let mut json = serde_json::to_string_pretty(&self.entries).expect("ledger serializes");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialize_runs_once_per_input_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ArtifactStore::create(dir.path()).unwrap();
        let mut calls = 0;
        store
            .materialize("a.txt", "digest-1", || {
                calls += 1;
                Ok(b"hello".to_vec())
            })
            .unwrap();
        store
            .materialize("a.txt", "digest-1", || {
                calls += 1;
                Ok(b"hello".to_vec())
            })
            .unwrap();
        assert_eq!(calls, 1);
    }

    #[test]
    fn changed_inputs_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ArtifactStore::create(dir.path()).unwrap();
        store.materialize("a.txt", "d1", || Ok(b"one".to_vec())).unwrap();
        store.materialize("a.txt", "d2", || Ok(b"two".to_vec())).unwrap();
        assert_eq!(store.read_verified("a.txt").unwrap(), b"two");
    }

    #[test]
    fn corruption_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ArtifactStore::create(dir.path()).unwrap();
        store.materialize("a.txt", "d1", || Ok(b"one".to_vec())).unwrap();
        std::fs::write(dir.path().join("a.txt"), b"tampered").unwrap();
        let err = store.read_verified("a.txt").unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }

    #[test]
    fn ledger_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ArtifactStore::create(dir.path()).unwrap();
        store.materialize("x/y.txt", "d", || Ok(b"z".to_vec())).unwrap();
        store.save().unwrap();
        let reopened = ArtifactStore::open(dir.path()).unwrap();
        assert_eq!(reopened.entries(), store.entries());
        assert_eq!(reopened.read_verified("x/y.txt").unwrap(), b"z");
    }
}
