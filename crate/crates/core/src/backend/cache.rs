//! Content-addressed response cache: `<dir>/<k[0:2]>/<k[2:4]>/<k>.response`.

use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{CacheKey, RawResponse};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[0..2]).join(&k[2..4]).join(format!("{k}.response"))
    }

    /// A corrupt entry reads as a miss and is overwritten on the next store.
    pub fn lookup(&self, key: &CacheKey) -> Option<RawResponse> {
        let bytes = std::fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(r) => Some(r),
            Err(e) => {
                tracing::warn!(key = key.as_str(), error = %e, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn store(&self, key: &CacheKey, response: &RawResponse) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec(response).expect("response serializes");
        bytes.push(b'\n');
        write_atomic(&self.path_for(key), &bytes)
    }

    pub fn stats(&self) -> CacheStats {
        let mut stats = CacheStats::default();
        if !self.root.is_dir() {
            return stats;
        }
        for entry in WalkDir::new(&self.root).into_iter().filter_map(Result::ok) {
            if entry.path().extension().and_then(|e| e.to_str()) == Some("response") {
                stats.entries += 1;
                stats.bytes += entry.metadata().map(|m| m.len()).unwrap_or(0);
            }
        }
        stats
    }

    /// Removes every entry; returns what was removed.
    pub fn purge(&self) -> std::io::Result<CacheStats> {
        let stats = self.stats();
        if self.root.is_dir() {
            std::fs::remove_dir_all(&self.root)?;
        }
        Ok(stats)
    }
}
