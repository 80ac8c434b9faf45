//! Content-addressed blob store standing in for IPFS.
//!
//! Blobs are keyed by their BLAKE2b-256 digest. The in-memory map can be
//! mirrored to a directory (`<root>/<hex content id>`, raw bytes) so runs can
//! be audited after the fact.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hash::{hash_bytes, Digest256};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentId(pub Digest256);

impl ContentId {
    pub fn of(blob: &[u8]) -> Self {
        Self(hash_bytes(blob))
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentId({:?})", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("refusing to store an empty blob")]
    EmptyBlob,
    #[error("no blob stored under {0}")]
    NotFound(ContentId),
    #[error("stored blob under {0} does not match its content id")]
    IntegrityFailure(ContentId),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// `true` iff `blob` hashes to `id`.
pub fn verify(id: &ContentId, blob: &[u8]) -> bool {
    ContentId::of(blob) == *id
}

#[derive(Clone, Debug, Default)]
pub struct ContentStore {
    blobs: BTreeMap<ContentId, Vec<u8>>,
    root: Option<PathBuf>,
    writes: usize,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store that also writes every new blob under `root`.
    pub fn with_dir(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root: Some(root), ..Self::default() })
    }

    /// Loads every `<hex>` file under `root`. Entries are keyed by file name
    /// and not re-hashed, so corrupted files surface on [`ContentStore::get`].
    pub fn load_dir(root: &Path) -> Result<Self, StoreError> {
        let mut blobs = BTreeMap::new();
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(id) = name.to_str().and_then(|s| s.parse::<Digest256>().ok()) else {
                continue;
            };
            blobs.insert(ContentId(id), fs::read(entry.path())?);
        }
        Ok(Self { blobs, root: None, writes: 0 })
    }

    pub fn put(&mut self, blob: &[u8]) -> Result<ContentId, StoreError> {
        if blob.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let id = ContentId::of(blob);
        if !self.blobs.contains_key(&id) {
            if let Some(root) = &self.root {
                fs::write(root.join(id.to_string()), blob)?;
            }
            self.blobs.insert(id, blob.to_vec());
            self.writes += 1;
        }
        Ok(id)
    }

    /// Returns the stored bytes after checking them against `id`.
    pub fn get(&self, id: &ContentId) -> Result<&[u8], StoreError> {
        let blob = self.blobs.get(id).ok_or(StoreError::NotFound(*id))?;
        if !verify(id, blob) {
            return Err(StoreError::IntegrityFailure(*id));
        }
        Ok(blob)
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.blobs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Number of distinct blobs written since creation.
    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn ids(&self) -> impl Iterator<Item = &ContentId> {
        self.blobs.keys()
    }

    /// Writes every blob to `root/<content id>`.
    pub fn save_dir(&self, root: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(root)?;
        for (id, blob) in &self.blobs {
            fs::write(root.join(id.to_string()), blob)?;
        }
        Ok(())
    }

    /// Raw access for fault injection in tests; bypasses integrity checks.
    #[doc(hidden)]
    pub fn raw_entry_mut(&mut self, id: &ContentId) -> Option<&mut Vec<u8>> {
        self.blobs.get_mut(id)
    }
}
