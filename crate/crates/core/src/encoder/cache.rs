//! Content-addressed representation cache, optionally persisted to a directory.
//!
//! On disk each entry is one file: an 8-byte little-endian element count
//! followed by little-endian `f32` values. `manifest.json` maps keys to files
//! and records the encoder fingerprint; a directory written by a different
//! encoder is ignored rather than reused.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    fingerprint: String,
    entries: BTreeMap<String, String>,
}

/// Builds a cache key from the encoder fingerprint, a representation kind, and
/// the content it was computed from.
pub fn content_key(fingerprint: &str, kind: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in std::iter::once(fingerprint).chain(std::iter::once(kind)).chain(parts.iter().copied()) {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
    format!("{kind}-{hex}")
}

pub fn encode_vector(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * v.len());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Option<Vec<f32>> {
    let len = u64::from_le_bytes(bytes.get(..8)?.try_into().ok()?) as usize;
    let body = bytes.get(8..)?;
    if body.len() != len.checked_mul(4)? {
        return None;
    }
    Some(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Debug)]
pub struct RepCache {
    fingerprint: String,
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<[f32]>>>,
    on_disk: Mutex<BTreeMap<String, String>>,
}

impl RepCache {
    pub fn in_memory(fingerprint: impl Into<String>) -> Self {
        RepCache { fingerprint: fingerprint.into(), dir: None, memory: Mutex::default(), on_disk: Mutex::default() }
    }

    pub fn persistent(dir: &Path, fingerprint: impl Into<String>) -> Result<Self> {
        let fingerprint = fingerprint.into();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut entries = BTreeMap::new();
        if manifest_path.exists() {
            let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(&manifest_path, e))?;
            if m.format == FORMAT && m.fingerprint == fingerprint {
                entries = m.entries;
            } else {
                log::warn!("cache at {} was built by `{}`; ignoring it", dir.display(), m.fingerprint);
            }
        }
        Ok(RepCache { fingerprint, dir: Some(dir.to_path_buf()), memory: Mutex::default(), on_disk: Mutex::new(entries) })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn key(&self, kind: &str, parts: &[&str]) -> String {
        content_key(&self.fingerprint, kind, parts)
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load_from_disk(&self, key: &str) -> Option<Vec<f32>> {
        let dir = self.dir.as_ref()?;
        let file = self.on_disk.lock().unwrap().get(key).cloned()?;
        let bytes = fs::read(dir.join(&file)).ok()?;
        let v = decode_vector(&bytes);
        if v.is_none() {
            log::warn!("corrupt cache entry {file}; recomputing");
        }
        v
    }

    /// Returns the cached vector for `key`, computing and storing it on a miss.
    /// Concurrent callers for the same key all observe the first stored value.
    pub fn get_or_compute<F>(&self, key: &str, compute: F) -> Result<Arc<[f32]>>
    where
        F: FnOnce() -> Result<Vec<f32>>,
    {
        if let Some(v) = self.memory.lock().unwrap().get(key) {
            return Ok(v.clone());
        }
        let (value, fresh) = match self.load_from_disk(key) {
            Some(v) => (v, false),
            None => (compute()?, true),
        };
        let stored = {
            let mut mem = self.memory.lock().unwrap();
            mem.entry(key.to_string()).or_insert_with(|| Arc::from(value)).clone()
        };
        if fresh {
            if let Some(dir) = &self.dir {
                let file = format!("{key}.bin");
                let path = dir.join(&file);
                fs::write(&path, encode_vector(&stored)).map_err(|e| Error::io(&path, e))?;
                self.on_disk.lock().unwrap().insert(key.to_string(), file);
            }
        }
        Ok(stored)
    }

    /// Writes the manifest. No-op for in-memory caches.
    pub fn flush(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let manifest =
            Manifest { format: FORMAT, fingerprint: self.fingerprint.clone(), entries: self.on_disk.lock().unwrap().clone() };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
