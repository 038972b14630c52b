//! Deterministic on-disk cache for LLM exchanges.
//!
//! The key is a pure function of (model id, sampling parameters,
//! instruction text), so identical requests always resolve to the same
//! record. Records are human-inspectable JSON files sharded by the first
//! two hex digits of the key; writes go through a temp file + rename, which
//! makes concurrent writers of the same key safe (last rename wins with
//! identical content).

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::Sampling;
use super::TscotError;

/// One cached exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model_id: String,
    pub sampling: Sampling,
    pub instruction: String,
    pub response: String,
    /// Seconds since the unix epoch at write time.
    pub created_at: u64,
}

/// Cache key: sha-256 over the request-identifying fields, NUL-separated so
/// field boundaries cannot collide.
pub fn cache_key(model_id: &str, sampling: &Sampling, instruction: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0]);
    hasher.update(format!("{}", sampling.temperature).as_bytes());
    hasher.update([0]);
    hasher.update(format!("{}", sampling.max_output_tokens).as_bytes());
    hasher.update([0]);
    hasher.update(instruction.as_bytes());
    hex::encode(hasher.finalize())
}

/// Directory-backed cache store.
#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

impl CacheStore {
    /// Open (creating if needed) a cache rooted at `root`.
    pub fn open(root: &Path) -> Result<CacheStore, TscotError> {
        std::fs::create_dir_all(root)
            .map_err(|source| TscotError::Io { path: root.display().to_string(), source })?;
        Ok(CacheStore { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Look up a record by key. `None` on a miss; a present-but-unreadable
    /// record is an error rather than a silent miss.
    pub fn get(&self, key: &str) -> Result<Option<CacheRecord>, TscotError> {
        let path = self.record_path(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(TscotError::Io { path: path.display().to_string(), source }),
        };
        let record: CacheRecord = serde_json::from_str(&raw).map_err(|e| {
            TscotError::CacheCorrupt { path: path.display().to_string(), reason: e.to_string() }
        })?;
        if record.key != key {
            return Err(TscotError::CacheCorrupt {
                path: path.display().to_string(),
                reason: format!("record key `{}` does not match file name", record.key),
            });
        }
        Ok(Some(record))
    }

    /// Store a response under its derived key, atomically.
    pub fn put(
        &self,
        model_id: &str,
        sampling: &Sampling,
        instruction: &str,
        response: &str,
    ) -> Result<CacheRecord, TscotError> {
        let key = cache_key(model_id, sampling, instruction);
        let record = CacheRecord {
            key: key.clone(),
            model_id: model_id.to_string(),
            sampling: sampling.clone(),
            instruction: instruction.to_string(),
            response: response.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let path = self.record_path(&key);
        let dir = path.parent().expect("record path has a shard directory");
        std::fs::create_dir_all(dir)
            .map_err(|source| TscotError::Io { path: dir.display().to_string(), source })?;
        let body = serde_json::to_string_pretty(&record).expect("cache record serializes");
        let tmp = tempfile::NamedTempFile::new_in(dir)
            .map_err(|source| TscotError::Io { path: dir.display().to_string(), source })?;
        std::fs::write(tmp.path(), body)
            .map_err(|source| TscotError::Io { path: tmp.path().display().to_string(), source })?;
        tmp.persist(&path)
            .map_err(|e| TscotError::Io { path: path.display().to_string(), source: e.error })?;
        Ok(record)
    }
}
