//! Run manifests: what was trained, on which data, and where the
//! artifacts landed.

use mme_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub dataset_path: String,
    /// FNV-1a 64 of the dataset file bytes, hex.
    pub dataset_hash: String,
    pub metrics_path: String,
    pub summary_path: String,
    pub checkpoint_path: String,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(format!("{:016x}", fnv1a64(&fs::read(path)?)))
}
