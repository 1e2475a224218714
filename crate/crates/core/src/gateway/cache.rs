//! Content-addressed on-disk cache: one file per entry, named by key.
//!
//! Entries are immutable. A later write under the same key with different
//! content is rejected and logged; runs are therefore resumable and the
//! cache directory is diffable.

use std::fs;
use std::io::ErrorKind;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct ContentCache {
    dir: PathBuf,
}

impl ContentCache {
    /// Opens (creating if needed) a cache directory.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<ContentCache> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ContentCache { dir })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.entry_path(key)).ok()
    }

    /// Stores a value under `key`. Returns true when this call created the
    /// entry; an existing identical entry is a no-op, a conflicting one is
    /// kept as-is and the collision logged.
    pub fn put(&self, key: &str, value: &str) -> std::io::Result<bool> {
        let path = self.entry_path(key);
        let tmp = self.dir.join(format!(".{key}.tmp.{}", std::process::id()));
        fs::write(&tmp, value)?;
        match fs::hard_link(&tmp, &path) {
            Ok(()) => {
                let _ = fs::remove_file(&tmp);
                Ok(true)
            }
            Err(err) if err.kind() == ErrorKind::AlreadyExists => {
                let _ = fs::remove_file(&tmp);
                if let Some(existing) = self.get(key) {
                    if existing != value {
                        log::warn!("cache key {key} already holds different content; keeping original");
                    }
                }
                Ok(false)
            }
            Err(err) => {
                let _ = fs::remove_file(&tmp);
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_immutability() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ContentCache::open(dir.path()).unwrap();
        assert!(cache.get("k").is_none());
        assert!(cache.put("k", "first").unwrap());
        assert_eq!(cache.get("k").as_deref(), Some("first"));
        // Conflicting writes never replace the stored value.
        assert!(!cache.put("k", "second").unwrap());
        assert_eq!(cache.get("k").as_deref(), Some("first"));
    }
}
