//! Date-partitioned columnar storage for flow records.
//!
//! A store is a directory holding `manifest.json` and one columnar file per
//! capture date under `partitions/`. Stores are immutable once written; a
//! [`Store`] handle can be shared across threads and decodes partitions
//! lazily.

mod ingest;
mod manifest;
mod partition;
mod table;
mod tier;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use ingest::{ingest_csv, ingest_path, IngestOptions, StoreBuilder, CSV_FIXED_COLUMNS};
pub use manifest::{
    DateEntry, SizeTier, StoreManifest, TierTargets, DEFAULT_L_PPI, DEFAULT_STAT_NAMES, SCHEMA_VERSION,
};
pub(crate) use partition::Partition;
pub use table::{Field, RowTable};
pub use tier::subset_by_date;

use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTITION_DIR: &str = "partitions";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ingestion error at row {row} (line {line}): {reason}")]
    Malformed { row: u64, line: u64, reason: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no rows ingested")]
    NoRows,
    #[error("a dataset already exists at {0}; pass the overwrite flag to replace it")]
    AlreadyExists(PathBuf),
    #[error("no store at {0} (manifest.json missing)")]
    NotFound(PathBuf),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("corrupt partition for {date}: {reason}")]
    CorruptPartition { date: NaiveDate, reason: String },
    #[error("size tier {tier} needs {target} rows but the store holds only {available}")]
    TierTooLarge { tier: SizeTier, target: u64, available: u64 },
    #[error("{0}")]
    InvalidTierTargets(String),
    #[error("unknown row id {0}")]
    UnknownRow(u64),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StoreError {
        let path = path.into();
        move |source| StoreError::Io { path, source }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// One bidirectional flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Assigned by the store in ingestion order.
    pub row_id: u64,
    pub date: NaiveDate,
    pub label: String,
    /// Payload sizes in bytes.
    pub ppi_sizes: Vec<u16>,
    /// Inter-packet times in milliseconds.
    pub ppi_ipt: Vec<f64>,
    /// +1 client to server, -1 server to client.
    pub ppi_dirs: Vec<i8>,
    pub flow_stats: Vec<f64>,
}

impl FlowRecord {
    /// Checks the per-record invariants against a schema.
    pub fn check(&self, l_ppi: usize, n_stats: usize) -> Result<(), String> {
        if self.label.is_empty() {
            return Err("empty label".into());
        }
        let (a, b, c) = (self.ppi_sizes.len(), self.ppi_ipt.len(), self.ppi_dirs.len());
        if a != b || b != c {
            return Err(format!(
                "sequence-length mismatch: ppi_sizes={a}, ppi_ipt={b}, ppi_dirs={c}"
            ));
        }
        if a > l_ppi {
            return Err(format!("sequence of {a} packets exceeds L_ppi={l_ppi}"));
        }
        if let Some(v) = self.ppi_ipt.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(format!("inter-packet time {v} is negative or not finite"));
        }
        if let Some(d) = self.ppi_dirs.iter().find(|d| **d != 1 && **d != -1) {
            return Err(format!("direction {d} is not +1 or -1"));
        }
        if self.flow_stats.len() != n_stats {
            return Err(format!(
                "expected {n_stats} flow statistics, found {}",
                self.flow_stats.len()
            ));
        }
        Ok(())
    }
}

/// Read handle over an ingested store.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: StoreManifest,
    // (start, end, date index, offset of `start` inside the partition)
    ranges: Vec<(u64, u64, usize, usize)>,
    partitions: Vec<OnceLock<Arc<Partition>>>,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(StoreError::NotFound(root));
        }
        let raw = fs::read(&path).map_err(StoreError::io(&path))?;
        let manifest: StoreManifest = serde_json::from_slice(&raw)
            .map_err(|e| StoreError::CorruptManifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;

        let mut ranges = Vec::new();
        for (d, entry) in manifest.dates.iter().enumerate() {
            let mut offset = 0usize;
            for &[a, b] in &entry.row_ranges {
                ranges.push((a, b, d, offset));
                offset += (b - a) as usize;
            }
        }
        ranges.sort_unstable();
        if ranges.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(StoreError::CorruptManifest("overlapping row ranges".into()));
        }
        let partitions = manifest.dates.iter().map(|_| OnceLock::new()).collect();
        Ok(Store {
            root,
            manifest,
            ranges,
            partitions,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn total_rows(&self) -> u64 {
        self.manifest.total_rows
    }

    /// Resolves a row id to `(date index, offset inside the partition)`.
    pub fn locate(&self, row_id: u64) -> Option<(usize, usize)> {
        let i = self.ranges.partition_point(|r| r.1 <= row_id);
        let &(a, b, d, off) = self.ranges.get(i)?;
        (a <= row_id && row_id < b).then(|| (d, off + (row_id - a) as usize))
    }

    pub fn contains(&self, row_id: u64) -> bool {
        self.locate(row_id).is_some()
    }

    pub fn date_of(&self, row_id: u64) -> Option<NaiveDate> {
        self.locate(row_id).map(|(d, _)| self.manifest.dates[d].date)
    }

    /// Decodes (and caches) the partition at manifest index `date_idx`,
    /// verifying its checksum.
    pub(crate) fn partition(&self, date_idx: usize) -> Result<Arc<Partition>> {
        if let Some(p) = self.partitions[date_idx].get() {
            return Ok(Arc::clone(p));
        }
        let entry = &self.manifest.dates[date_idx];
        let path = self.root.join(&entry.file);
        let bytes = fs::read(&path).map_err(StoreError::io(&path))?;
        let corrupt = |reason: String| StoreError::CorruptPartition {
            date: entry.date,
            reason,
        };
        if util::sha256_hex(&bytes) != entry.checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        let part = Partition::decode(entry.date, &bytes).map_err(corrupt)?;
        if part.len() as u64 != entry.rows || part.row_ids.iter().copied().ne(entry.row_ids()) {
            return Err(corrupt("row ids disagree with the manifest".into()));
        }
        if part.l_ppi != self.manifest.l_ppi || part.n_stats != self.manifest.n_stats() {
            return Err(corrupt("schema disagrees with the manifest".into()));
        }
        let part = Arc::new(part);
        let _ = self.partitions[date_idx].set(Arc::clone(&part));
        Ok(part)
    }

    pub fn record(&self, row_id: u64) -> Result<FlowRecord> {
        let (d, off) = self.locate(row_id).ok_or(StoreError::UnknownRow(row_id))?;
        Ok(self.partition(d)?.record(off))
    }

    /// Label of every row of one date, in ascending row-id order.
    pub fn labels_of_date(&self, date_idx: usize) -> Result<Vec<(u64, String)>> {
        let p = self.partition(date_idx)?;
        Ok((0..p.len()).map(|i| (p.row_ids[i], p.label(i).to_string())).collect())
    }

    /// Deterministic subset of row ids for a size tier, ascending.
    ///
    /// Per-date quotas are apportioned with a house-monotone quota method, and
    /// each date keeps its lowest-priority rows, so for a fixed seed every
    /// smaller tier is a subset of every larger one and each date holds
    /// within one row of its proportional share.
    pub fn derive_size_tier(&self, tier: SizeTier, seed: u64) -> Result<Vec<u64>> {
        let by_date = self.tier_rows_by_date(tier, seed)?;
        let mut rows: Vec<u64> = by_date.into_iter().flatten().collect();
        rows.sort_unstable();
        Ok(rows)
    }

    /// Like [`Store::derive_size_tier`] but grouped per manifest date.
    pub fn tier_rows_by_date(&self, tier: SizeTier, seed: u64) -> Result<Vec<Vec<u64>>> {
        let target = match self.manifest.tier_targets.target(tier) {
            None => self.total_rows(),
            Some(t) if t > self.total_rows() => {
                return Err(StoreError::TierTooLarge {
                    tier,
                    target: t,
                    available: self.total_rows(),
                })
            }
            Some(t) => t,
        };
        Ok(subset_by_date(&self.manifest, target, seed))
    }

    pub fn read_rows(&self, rows: &[u64], fields: &[Field]) -> Result<RowTable> {
        table::read_rows(self, rows, fields)
    }
}
