//! Split index files: `<store>/splits/<fingerprint>.idx` holds the row ids,
//! `<fingerprint>.json` the class map, counts and a digest of the index file.
//!
//! ```text
//! magic    8 bytes "FBSPLIT1"
//! n_train  u64
//! n_val    u64
//! n_test   u64
//! rows     (n_train + n_val + n_test) x u64, each split ascending
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ClassMap, Result, SplitCounts, SplitError, SplitIndex};
use crate::util;

pub const SPLIT_DIR: &str = "splits";
const MAGIC: &[u8; 8] = b"FBSPLIT1";

pub fn index_path(store_root: &Path, fingerprint: &str) -> PathBuf {
    store_root.join(SPLIT_DIR).join(format!("{fingerprint}.idx"))
}

pub fn sidecar_path(store_root: &Path, fingerprint: &str) -> PathBuf {
    store_root.join(SPLIT_DIR).join(format!("{fingerprint}.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Sizes {
    train: u64,
    val: u64,
    test: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    fingerprint: String,
    dataset_id: String,
    index_sha256: String,
    sizes: Sizes,
    test_unknown: u64,
    class_map: ClassMap,
    per_date_counts: BTreeMap<NaiveDate, SplitCounts>,
    warnings: Vec<String>,
}

fn encode(index: &SplitIndex) -> Vec<u8> {
    let n = index.train.len() + index.val.len() + index.test.len();
    let mut out = Vec::with_capacity(32 + 8 * n);
    out.extend_from_slice(MAGIC);
    for part in [&index.train, &index.val, &index.test] {
        out.extend_from_slice(&(part.len() as u64).to_le_bytes());
    }
    for part in [&index.train, &index.val, &index.test] {
        for r in part.iter() {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> std::result::Result<[Vec<u64>; 3], String> {
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let sizes = [word(8), word(16), word(24)];
    let total: u64 = sizes.iter().sum();
    if bytes.len() as u64 != 32 + 8 * total {
        return Err("length disagrees with the header".into());
    }
    let mut at = 32;
    let mut out: [Vec<u64>; 3] = Default::default();
    for (k, &n) in sizes.iter().enumerate() {
        out[k] = (0..n).map(|i| word(at + 8 * i as usize)).collect();
        at += 8 * n as usize;
    }
    Ok(out)
}

impl SplitIndex {
    /// Writes the index and its sidecar under `store_root`.
    pub fn save(&self, store_root: &Path) -> Result<()> {
        let bytes = encode(self);
        let sidecar = Sidecar {
            fingerprint: self.fingerprint.clone(),
            dataset_id: self.dataset_id.clone(),
            index_sha256: util::sha256_hex(&bytes),
            sizes: Sizes {
                train: self.train.len() as u64,
                val: self.val.len() as u64,
                test: self.test.len() as u64,
            },
            test_unknown: self.test_unknown,
            class_map: self.class_map.clone(),
            per_date_counts: self.per_date_counts.clone(),
            warnings: self.warnings.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        json.push(b'\n');
        let idx = index_path(store_root, &self.fingerprint);
        let side = sidecar_path(store_root, &self.fingerprint);
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| SplitError::Io { path, source }
        };
        std::fs::create_dir_all(store_root.join(SPLIT_DIR)).map_err(io(&store_root.join(SPLIT_DIR)))?;
        util::write_atomic(&idx, &bytes).map_err(io(&idx))?;
        util::write_atomic(&side, &json).map_err(io(&side))?;
        Ok(())
    }

    /// Reads a persisted split. `Ok(None)` if none exists for `fingerprint`.
    pub fn load(store_root: &Path, fingerprint: &str) -> Result<Option<SplitIndex>> {
        let idx = index_path(store_root, fingerprint);
        let side = sidecar_path(store_root, fingerprint);
        if !idx.is_file() || !side.is_file() {
            return Ok(None);
        }
        let corrupt = |reason: String| SplitError::CorruptIndex {
            path: idx.display().to_string(),
            reason,
        };
        let bytes = std::fs::read(&idx).map_err(|e| corrupt(e.to_string()))?;
        let raw = std::fs::read(&side).map_err(|e| corrupt(e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_slice(&raw).map_err(|e| corrupt(format!("sidecar: {e}")))?;
        if sidecar.index_sha256 != util::sha256_hex(&bytes) {
            return Err(corrupt("digest mismatch".into()));
        }
        if sidecar.fingerprint != fingerprint {
            return Err(corrupt("fingerprint mismatch".into()));
        }
        let [train, val, test] = decode(&bytes).map_err(corrupt)?;
        Ok(Some(SplitIndex {
            fingerprint: sidecar.fingerprint,
            dataset_id: sidecar.dataset_id,
            train,
            val,
            test,
            class_map: sidecar.class_map,
            per_date_counts: sidecar.per_date_counts,
            test_unknown: sidecar.test_unknown,
            warnings: sidecar.warnings,
        }))
    }
}
