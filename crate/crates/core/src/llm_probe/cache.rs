//! Exchange cache keyed by a digest of (model id, prompt, temperature).
//! Optionally backed by an append-only JSON-lines file, one record per key.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::provider::ProviderResponse;
use super::ProbeError;

/// Hex SHA-256 of the JSON encoding of `(model_id, prompt, temperature)`.
pub fn cache_key(model_id: &str, prompt: &str, temperature: f64) -> String {
    let encoded = serde_json::to_string(&(model_id, prompt, temperature)).expect("plain tuple serializes");
    hex::encode(Sha256::digest(encoded.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub model_id: String,
    pub temperature: f64,
    pub prompt: String,
    pub response: ProviderResponse,
}

#[derive(Default)]
pub struct ExchangeCache {
    entries: RwLock<HashMap<String, CacheRecord>>,
    file: Option<(PathBuf, Mutex<File>)>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ExchangeCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new records to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| ProbeError::CacheIo { path: path.clone(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| ProbeError::CacheCorrupt { path: path.clone(), line: n + 1, message: e.to_string() })?;
                entries.entry(record.cache_key.clone()).or_insert(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(ExchangeCache { entries: RwLock::new(entries), file: Some((path, Mutex::new(file))), key_locks: Mutex::default() })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Stores `record` unless its key is already present. Returns whether it
    /// was new.
    pub fn insert(&self, record: CacheRecord) -> Result<bool, ProbeError> {
        let mut entries = self.entries.write().expect("cache lock");
        if entries.contains_key(&record.cache_key) {
            return Ok(false);
        }
        if let Some((path, file)) = &self.file {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            let mut file = file.lock().expect("cache file lock");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| ProbeError::CacheIo { path: path.clone(), source })?;
        }
        entries.insert(record.cache_key.clone(), record);
        Ok(true)
    }

    /// Lock serialising lookups and fills of one key, so concurrent workers
    /// asking the same question issue one request between them.
    pub(crate) fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks.lock().expect("key lock table").entry(key.to_string()).or_default().clone()
    }
}
