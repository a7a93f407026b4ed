//! Bias-profile cache shared by parallel trials, optionally persisted to disk.
//!
//! On disk each profile is `<digest>.bin` (magic `SHRPBIA\0`, version, length, then the
//! bias values as little-endian `f32`) next to a `<digest>.json` sidecar holding the full
//! key. A file is only used when its sidecar key equals the requested key exactly. Both
//! files are written to a temporary name and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde_json::{json, Value};
use sharp_core::poscalib::{BiasProfile, ProfileKey, ProfileStore};

use crate::error::{Result, SharpError};

pub const BIAS_MAGIC: &[u8; 8] = b"SHRPBIA\0";
pub const BIAS_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct ProfileCache {
    memory: RwLock<HashMap<ProfileKey, BiasProfile>>,
    dir: Option<PathBuf>,
}

fn key_json(key: &ProfileKey) -> Value {
    json!({
        "visual_len": key.visual_len,
        "text_len": key.text_len,
        "frames": key.frames,
        "tokens_per_frame": key.tokens_per_frame,
        "prune_layer": key.prune_layer,
        "mask_signature": format!("{:016x}", key.mask_signature),
        "text_signature": format!("{:016x}", key.text_signature),
        "weight_checksum": format!("{:016x}", key.weight_checksum),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| SharpError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SharpError::io(path, e))
}

impl ProfileCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| SharpError::io(&dir, e))?;
        Ok(Self {
            memory: RwLock::default(),
            dir: Some(dir),
        })
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("profile cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn paths(&self, key: &ProfileKey) -> Option<(PathBuf, PathBuf)> {
        let dir = self.dir.as_ref()?;
        let stem = format!("{:016x}", key.digest());
        Some((dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json"))))
    }

    pub fn save(&self, profile: &BiasProfile) -> Result<()> {
        let Some((bin, side)) = self.paths(&profile.key) else {
            return Ok(());
        };
        let mut bytes = Vec::with_capacity(16 + 4 * profile.len());
        bytes.extend_from_slice(BIAS_MAGIC);
        bytes.extend_from_slice(&BIAS_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(profile.len() as u32).to_le_bytes());
        for b in &profile.bias {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        write_atomic(&bin, &bytes)?;
        let meta = serde_json::to_vec_pretty(&key_json(&profile.key)).expect("json encodes");
        write_atomic(&side, &meta)
    }

    pub fn load(&self, key: &ProfileKey) -> Result<Option<BiasProfile>> {
        let Some((bin, side)) = self.paths(key) else {
            return Ok(None);
        };
        let Ok(meta) = fs::read(&side) else {
            return Ok(None);
        };
        let meta: Value = serde_json::from_slice(&meta).map_err(|e| SharpError::format(&side, e.to_string()))?;
        if meta != key_json(key) {
            return Ok(None);
        }
        let bytes = fs::read(&bin).map_err(|e| SharpError::io(&bin, e))?;
        if bytes.len() < 16 || &bytes[..8] != BIAS_MAGIC {
            return Err(SharpError::format(&bin, "not a bias profile"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if version != BIAS_VERSION || n != key.visual_len || bytes.len() != 16 + 4 * n {
            return Err(SharpError::format(&bin, "bias profile header does not match its key"));
        }
        let bias = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(BiasProfile { bias, key: *key }))
    }
}

impl ProfileStore for ProfileCache {
    fn lookup(&self, key: &ProfileKey) -> Option<BiasProfile> {
        if let Some(p) = self.memory.read().expect("profile cache lock").get(key) {
            return Some(p.clone());
        }
        // a damaged file is treated as a miss and overwritten by the fresh estimate
        let p = self.load(key).ok().flatten()?;
        self.memory.write().expect("profile cache lock").insert(*key, p.clone());
        Some(p)
    }

    fn insert(&self, profile: &BiasProfile) {
        self.memory
            .write()
            .expect("profile cache lock")
            .insert(profile.key, profile.clone());
        // persistence is best-effort; the in-memory copy is authoritative for this run
        let _ = self.save(profile);
    }
}
