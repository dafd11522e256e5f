//! Content-addressed response cache: one file per entry, named by the hex
//! digest of the [`CacheKey`], holding the verbatim response JSON.

use super::Role;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("cache store {path}: {source}")]
pub struct CacheError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Identity of one backend request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub role: Role,
    pub backend_id: String,
    /// SHA-256 of the canonical request body.
    pub content_digest: [u8; 32],
}

impl CacheKey {
    pub fn new(role: Role, backend_id: impl Into<String>, canonical_body: &[u8]) -> Self {
        Self {
            role,
            backend_id: backend_id.into(),
            content_digest: Sha256::digest(canonical_body).into(),
        }
    }

    pub fn hex_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.role.as_str().as_bytes());
        h.update([0]);
        h.update(self.backend_id.as_bytes());
        h.update([0]);
        h.update(self.content_digest);
        hex::encode(h.finalize())
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    /// Opens (creating if needed) a cache rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| CacheError {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.hex_digest())
    }

    /// Returns the stored bytes, or `None` on a miss. Entries that are not
    /// valid JSON are reported and treated as misses.
    pub fn get(&self, key: &CacheKey) -> Option<Vec<u8>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return None,
            Err(e) => {
                tracing::warn!(path = %path.display(), "unreadable cache entry: {e}");
                return None;
            }
        };
        if serde_json::from_slice::<serde_json::Value>(&bytes).is_err() {
            tracing::warn!(path = %path.display(), "corrupt cache entry treated as miss");
            return None;
        }
        Some(bytes)
    }

    /// Stores `bytes` atomically: written to a temporary file in the same
    /// directory, then renamed over the entry.
    pub fn put(&self, key: &CacheKey, bytes: &[u8]) -> Result<(), CacheError> {
        let path = self.entry_path(key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            key.hex_digest(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let err = |source| CacheError {
            path: path.clone(),
            source,
        };
        let write = || -> io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            err(e)
        })
    }

    pub fn remove(&self, key: &CacheKey) {
        let _ = fs::remove_file(self.entry_path(key));
    }
}
