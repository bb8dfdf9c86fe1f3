use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Hex SHA-256 over the canonical JSON of `(backend, kind, request, sample_index)`.
///
/// `serde_json::Value` keeps object keys sorted, so the key does not depend
/// on the order fields were inserted.
pub(crate) fn content_key(
    backend_id: &str,
    kind: &str,
    request: &serde_json::Value,
    sample_index: Option<u32>,
) -> String {
    let canonical = serde_json::json!({
        "backend": backend_id,
        "kind": kind,
        "request": request,
        "sample_index": sample_index,
    });
    let bytes = serde_json::to_vec(&canonical).expect("json values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// One on-disk record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: String,
    pub request: serde_json::Value,
    pub value: serde_json::Value,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    ReadWrite,
    ReadOnly,
}

/// Content-addressed record store: a directory of `<key[0..2]>/<key>.json`
/// files, fronted by an in-memory map. Readers share a lock; writers are
/// serialized.
pub struct Store {
    dir: Option<PathBuf>,
    mode: StoreMode,
    memory: RwLock<HashMap<String, serde_json::Value>>,
    write_lock: Mutex<()>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            mode: StoreMode::ReadWrite,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    /// Open (creating if needed) a cache directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Store(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: Some(dir),
            mode: StoreMode::ReadWrite,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    /// Open an existing directory as a replay store. Writes are rejected.
    pub fn open_read_only(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(GatewayError::Store(format!("replay store {} does not exist", dir.display())));
        }
        Ok(Self {
            dir: Some(dir),
            mode: StoreMode::ReadOnly,
            memory: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<serde_json::Value>, GatewayError> {
        if let Some(v) = self.memory.read().get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(path) = self.path_for(key) else {
            return Ok(None);
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Store(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Store(format!("corrupt record {}: {e}", path.display())))?;
        if entry.key != key {
            return Err(GatewayError::Store(format!("record {} holds key {}", path.display(), entry.key)));
        }
        self.memory.write().insert(key.to_string(), entry.value.clone());
        Ok(Some(entry.value))
    }

    pub fn get_as<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, GatewayError> {
        match self.get(key)? {
            None => Ok(None),
            Some(v) => serde_json::from_value(v)
                .map(Some)
                .map_err(|e| GatewayError::Store(format!("record {key} has unexpected shape: {e}"))),
        }
    }

    pub fn put<T: Serialize>(
        &self,
        key: &str,
        kind: &str,
        request: &serde_json::Value,
        value: &T,
    ) -> Result<(), GatewayError> {
        if self.mode == StoreMode::ReadOnly {
            return Err(GatewayError::Store("replay store is read-only".into()));
        }
        let value = serde_json::to_value(value).map_err(|e| GatewayError::Store(e.to_string()))?;
        let _guard = self.write_lock.lock();
        if let Some(path) = self.path_for(key) {
            let entry = CacheEntry {
                key: key.to_string(),
                kind: kind.to_string(),
                request: request.clone(),
                value: value.clone(),
                created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            };
            let parent = path.parent().expect("record path has a parent");
            fs::create_dir_all(parent).map_err(|e| GatewayError::Store(format!("{}: {e}", parent.display())))?;
            let tmp = path.with_extension("json.tmp");
            let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| GatewayError::Store(e.to_string()))?;
            fs::write(&tmp, bytes).map_err(|e| GatewayError::Store(format!("{}: {e}", tmp.display())))?;
            fs::rename(&tmp, &path).map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        }
        self.memory.write().insert(key.to_string(), value);
        Ok(())
    }

    /// Number of records currently resident in memory.
    pub fn resident_len(&self) -> usize {
        self.memory.read().len()
    }
}
