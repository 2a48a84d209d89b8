//! Named parameter storage and the on-disk checkpoint format.
//!
//! A checkpoint is one archive file (`params.bin`) mapping parameter name to
//! shape plus little-endian 32-bit floats, and a JSON manifest
//! (`manifest.json`) carrying the artifact version, the configuration hash,
//! and the pretraining step count.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::NumArray;
use super::real::Real;
use super::ComputeError;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SHIPPRM1";

/// All learnable arrays, addressable by dotted name. Iteration order is the
/// name order, which keeps optimizer sweeps deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<R: Real> {
    entries: BTreeMap<String, NumArray<R>>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: NumArray<R>) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&NumArray<R>, ComputeError> {
        self.entries
            .get(name)
            .ok_or_else(|| ComputeError::Usage(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NumArray<R>, ComputeError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| ComputeError::Usage(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NumArray<R>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NumArray<R>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Copy every entry whose name starts with `prefix` into `target`,
    /// replacing same-named entries. Returns how many were copied.
    pub fn copy_prefix_into(&self, prefix: &str, target: &mut ParamStore<R>) -> usize {
        let mut n = 0;
        for (name, value) in &self.entries {
            if name.starts_with(prefix) {
                target.entries.insert(name.clone(), value.clone());
                n += 1;
            }
        }
        n
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CheckpointManifest {
    /// Artifact version that wrote the checkpoint.
    pub version: String,
    /// Hash of the resolved configuration the run used.
    pub config_hash: String,
    /// Language-model pretraining steps applied to these weights.
    pub pretrain_steps: u64,
}

impl CheckpointManifest {
    pub fn new(config_hash: &str, pretrain_steps: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            pretrain_steps,
        }
    }
}

/// Write `params.bin` + `manifest.json` under `dir`, creating it if needed.
/// Values are stored as little-endian f32 regardless of working precision.
pub fn save_checkpoint<R: Real>(
    store: &ParamStore<R>,
    dir: &Path,
    manifest: &CheckpointManifest,
) -> Result<(), ComputeError> {
    std::fs::create_dir_all(dir)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(value.cols() as u32).to_le_bytes());
        for v in value.data() {
            buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(dir.join("params.bin"))?;
    f.write_all(&buf)?;
    let mf = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(mf, manifest)
        .map_err(|e| ComputeError::Checkpoint(e.to_string()))?;
    Ok(())
}

/// Read a checkpoint directory written by `save_checkpoint`.
pub fn load_checkpoint<R: Real>(
    dir: &Path,
) -> Result<(ParamStore<R>, CheckpointManifest), ComputeError> {
    let mut raw = Vec::new();
    std::fs::File::open(dir.join("params.bin"))?.read_to_end(&mut raw)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ComputeError> {
        if *pos + n > raw.len() {
            return Err(ComputeError::Checkpoint("truncated archive".to_string()));
        }
        let s = &raw[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ComputeError::Checkpoint(
            "bad magic; not a parameter archive".to_string(),
        ));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| ComputeError::Checkpoint("non-utf8 parameter name".to_string()))?;
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let bytes = take(&mut pos, rows * cols * 4)?;
        let data: Vec<R> = bytes
            .chunks_exact(4)
            .map(|c| R::from_f32_bits(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        store.insert(&name, NumArray::from_raw(rows, cols, data));
    }
    let mf = std::fs::File::open(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_reader(mf).map_err(|e| ComputeError::Checkpoint(e.to_string()))?;
    Ok((store, manifest))
}
