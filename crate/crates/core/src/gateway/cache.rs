//! Content-addressed response cache.
//!
//! One JSON record per request key, fanned out two levels deep by hex
//! prefix: `<root>/ab/cd/abcd….json`. Writes go through a temp file and an
//! atomic rename, serialized by a lock; reads touch the filesystem
//! directly, so concurrent readers are safe.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{GatewayError, TokenUsage};

/// Canonical on-disk form of one request part.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PartRecord {
    Text { text: String },
    Image { media_type: String, data_b64: String },
}

/// Canonical on-disk form of a request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestRecord {
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output: Option<u32>,
    pub parts: Vec<PartRecord>,
}

/// One cached call: the key, the canonical request, and the response.
/// Perception responses store their payload base64-encoded in
/// `response_text` with `media_type` set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: RequestRecord,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub timestamp: u64,
    pub latency_seconds: f64,
}

impl CacheRecord {
    pub fn now_timestamp() -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub records: usize,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl DiskCache {
    /// Opens (or creates) a cache directory.
    pub fn open(root: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(root).map_err(|e| GatewayError::Io(e.to_string()))?;
        Ok(DiskCache {
            root: root.to_path_buf(),
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    /// Opens an existing cache directory; replay mode refuses to invent one.
    pub fn open_existing(root: &Path) -> Result<Self, GatewayError> {
        if !root.is_dir() {
            return Err(GatewayError::Config(format!(
                "cache directory {} does not exist",
                root.display()
            )));
        }
        Ok(DiskCache {
            root: root.to_path_buf(),
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[0..2]).join(&key[2..4]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheRecord>, GatewayError> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Io(e.to_string())),
        };
        let record: CacheRecord = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Io(format!("corrupt cache record {key}: {e}")))?;
        Ok(Some(record))
    }

    pub fn put(&self, record: &CacheRecord) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().expect("cache write lock");
        let path = self.path_for(&record.key);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::Io(e.to_string()))?;
        }
        let nonce = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}-{nonce}", std::process::id()));
        let text = serde_json::to_string_pretty(record)
            .map_err(|e| GatewayError::Io(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| GatewayError::Io(e.to_string()))?;
        std::fs::rename(&tmp, &path).map_err(|e| GatewayError::Io(e.to_string()))?;
        Ok(())
    }

    fn record_paths(&self) -> Result<Vec<PathBuf>, GatewayError> {
        let mut paths = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = std::fs::read_dir(&dir).map_err(|e| GatewayError::Io(e.to_string()))?;
            for entry in entries {
                let entry = entry.map_err(|e| GatewayError::Io(e.to_string()))?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "json") {
                    paths.push(path);
                }
            }
        }
        paths.sort();
        Ok(paths)
    }

    pub fn stats(&self) -> Result<CacheStats, GatewayError> {
        let paths = self.record_paths()?;
        let mut bytes = 0;
        for p in &paths {
            bytes += std::fs::metadata(p)
                .map_err(|e| GatewayError::Io(e.to_string()))?
                .len();
        }
        Ok(CacheStats {
            records: paths.len(),
            bytes,
        })
    }

    /// Removes records older than `max_age_seconds` (by recorded
    /// timestamp); `None` removes everything. Returns the removed count.
    pub fn gc(&self, max_age_seconds: Option<u64>) -> Result<usize, GatewayError> {
        let now = CacheRecord::now_timestamp();
        let mut removed = 0;
        for path in self.record_paths()? {
            let drop = match max_age_seconds {
                None => true,
                Some(max_age) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| GatewayError::Io(e.to_string()))?;
                    match serde_json::from_str::<CacheRecord>(&text) {
                        Ok(record) => now.saturating_sub(record.timestamp) > max_age,
                        Err(_) => true,
                    }
                }
            };
            if drop {
                std::fs::remove_file(&path).map_err(|e| GatewayError::Io(e.to_string()))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
