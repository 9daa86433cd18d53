//! Serving a split as one table or as batches.

mod export;

use chrono::NaiveDate;

pub use export::{export_csv, EXPORT_EXTRA_COLUMNS};

use crate::sample;
use crate::scaling::{FittedScalers, ScalingError};
use crate::split::{ClassMap, SplitIndex, SplitName};
use crate::store::{Field, RowTable, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error("{split} table needs about {estimate} bytes, above the {limit}-byte ceiling; iterate in batches instead")]
    TooLarge { split: SplitName, estimate: u64, limit: u64 },
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("cannot write export: {0}")]
    Export(String),
}

impl BatchError {
    pub fn kind(&self) -> &'static str {
        match self {
            BatchError::Store(_) => "StoreError",
            BatchError::Scaling(e) => e.kind(),
            BatchError::TooLarge { .. } => "TableTooLarge",
            BatchError::ZeroBatchSize => "InvalidBatchSize",
            BatchError::Export(_) => "ExportError",
        }
    }
}

pub type Result<T, E = BatchError> = std::result::Result<T, E>;

/// Default ceiling for [`to_table`].
pub const DEFAULT_MEMORY_LIMIT: u64 = 4 << 30;

/// Columnar rows of one split. Sequence matrices are row-major
/// `len x l_ppi` and zero padded past `valid_len`; `fstats` is row-major
/// `len x n_stats`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowBatch {
    pub l_ppi: usize,
    pub n_stats: usize,
    pub row_ids: Vec<u64>,
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<String>,
    pub label_ids: Vec<u32>,
    pub valid_len: Vec<u16>,
    pub psizes: Vec<f64>,
    pub ipt: Vec<f64>,
    pub dirs: Vec<i8>,
    pub fstats: Vec<f64>,
    /// Whether scalers were applied.
    pub scaled: bool,
}

impl FlowBatch {
    pub fn empty(l_ppi: usize, n_stats: usize) -> Self {
        FlowBatch {
            l_ppi,
            n_stats,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn check_shape(&self) -> Result<(), String> {
        let b = self.len();
        let (l, f) = (self.l_ppi, self.n_stats);
        let lens = [
            ("dates", self.dates.len(), b),
            ("labels", self.labels.len(), b),
            ("label_ids", self.label_ids.len(), b),
            ("valid_len", self.valid_len.len(), b),
            ("psizes", self.psizes.len(), b * l),
            ("ipt", self.ipt.len(), b * l),
            ("dirs", self.dirs.len(), b * l),
            ("fstats", self.fstats.len(), b * f),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(format!("{name} has {got} entries, expected {want}"));
            }
        }
        if let Some(n) = self.valid_len.iter().find(|&&n| n as usize > l) {
            return Err(format!("valid length {n} exceeds L_ppi={l}"));
        }
        Ok(())
    }

    /// Appends the rows of `other`. An empty batch takes over its scaled flag.
    pub fn extend(&mut self, other: &FlowBatch) {
        debug_assert_eq!((self.l_ppi, self.n_stats), (other.l_ppi, other.n_stats));
        if self.is_empty() {
            self.scaled = other.scaled;
        }
        self.row_ids.extend_from_slice(&other.row_ids);
        self.dates.extend_from_slice(&other.dates);
        self.labels.extend_from_slice(&other.labels);
        self.label_ids.extend_from_slice(&other.label_ids);
        self.valid_len.extend_from_slice(&other.valid_len);
        self.psizes.extend_from_slice(&other.psizes);
        self.ipt.extend_from_slice(&other.ipt);
        self.dirs.extend_from_slice(&other.dirs);
        self.fstats.extend_from_slice(&other.fstats);
    }

    pub fn psizes_row(&self, i: usize) -> &[f64] {
        &self.psizes[i * self.l_ppi..(i + 1) * self.l_ppi]
    }

    pub fn ipt_row(&self, i: usize) -> &[f64] {
        &self.ipt[i * self.l_ppi..(i + 1) * self.l_ppi]
    }

    pub fn dirs_row(&self, i: usize) -> &[i8] {
        &self.dirs[i * self.l_ppi..(i + 1) * self.l_ppi]
    }

    pub fn fstats_row(&self, i: usize) -> &[f64] {
        &self.fstats[i * self.n_stats..(i + 1) * self.n_stats]
    }

    /// Builds a batch from a store table, keeping the table's row order.
    fn from_table(t: RowTable, map: &ClassMap) -> Self {
        let labels = t.labels.unwrap_or_default();
        FlowBatch {
            l_ppi: t.l_ppi,
            n_stats: t.stat_names.len(),
            label_ids: labels.iter().map(|l| map.label_id(l)).collect(),
            labels,
            row_ids: t.row_ids,
            dates: t.dates.unwrap_or_default(),
            valid_len: t.valid_len.unwrap_or_default(),
            psizes: t.ppi_sizes.unwrap_or_default().into_iter().map(f64::from).collect(),
            ipt: t.ppi_ipt.unwrap_or_default(),
            dirs: t.ppi_dirs.unwrap_or_default(),
            fstats: t.flow_stats.unwrap_or_default(),
            scaled: false,
        }
    }

    /// Rows of `self` picked by position, in that order.
    fn gather(&self, positions: &[usize]) -> Self {
        let (l, f) = (self.l_ppi, self.n_stats);
        let mut out = FlowBatch::empty(l, f);
        out.scaled = self.scaled;
        for &i in positions {
            out.row_ids.push(self.row_ids[i]);
            out.dates.push(self.dates[i]);
            out.labels.push(self.labels[i].clone());
            out.label_ids.push(self.label_ids[i]);
            out.valid_len.push(self.valid_len[i]);
            out.psizes.extend_from_slice(self.psizes_row(i));
            out.ipt.extend_from_slice(self.ipt_row(i));
            out.dirs.extend_from_slice(self.dirs_row(i));
            out.fstats.extend_from_slice(self.fstats_row(i));
        }
        out
    }
}

/// Reads `rows` (in that order) as a batch. Reads happen in ascending row
/// order, so partitions are visited sequentially, then rows are reordered.
pub fn read_batch(store: &Store, rows: &[u64], map: &ClassMap, scalers: Option<&FittedScalers>) -> Result<FlowBatch> {
    let t = store.read_rows(rows, &Field::ALL)?;
    let sorted = FlowBatch::from_table(t, map);
    let batch = if rows.windows(2).all(|w| w[0] < w[1]) {
        sorted
    } else {
        let pos: Vec<usize> = rows
            .iter()
            .map(|r| sorted.row_ids.binary_search(r).expect("row was read"))
            .collect();
        sorted.gather(&pos)
    };
    match scalers {
        Some(s) => Ok(s.transform(&batch)?),
        None => Ok(batch),
    }
}

/// Approximate in-memory size of a table with `rows` rows.
pub fn estimate_table_bytes(store: &Store, rows: usize) -> u64 {
    let m = store.manifest();
    let per_row = 8 + 4 + 24 + 16 + 4 + 2 + m.l_ppi * (8 + 8 + 1) + m.n_stats() * 8;
    (rows * per_row) as u64
}

/// Loads a whole split into memory, ascending by row id.
pub fn to_table(
    store: &Store,
    split: SplitName,
    index: &SplitIndex,
    scalers: Option<&FittedScalers>,
    memory_limit: u64,
) -> Result<FlowBatch> {
    let rows = index.rows(split);
    let estimate = estimate_table_bytes(store, rows.len());
    if estimate > memory_limit {
        return Err(BatchError::TooLarge {
            split,
            estimate,
            limit: memory_limit,
        });
    }
    read_batch(store, rows, &index.class_map, scalers)
}

/// Row order of one epoch: ascending row ids, or sorted by the epoch's
/// shuffle key.
pub fn epoch_order(rows: &[u64], shuffle: bool, seed: u64, epoch: u64) -> Vec<u64> {
    let mut order = rows.to_vec();
    if shuffle {
        order.sort_by_cached_key(|&r| (sample::shuffle_key(seed, epoch, r), r));
    } else {
        order.sort_unstable();
    }
    order
}

/// Iterator over the batches of one epoch.
pub struct BatchIter<'a> {
    store: &'a Store,
    map: &'a ClassMap,
    scalers: Option<&'a FittedScalers>,
    order: Vec<u64>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    /// Row ids of the epoch in serving order.
    pub fn order(&self) -> &[u64] {
        &self.order
    }

    pub fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<FlowBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;
        Some(read_batch(self.store, rows, self.map, self.scalers))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub epoch: u64,
}

/// Batches covering `split` exactly once, in the order fixed by
/// `(seed, epoch)` when shuffling.
pub fn iter_batches<'a>(
    store: &'a Store,
    split: SplitName,
    index: &'a SplitIndex,
    scalers: Option<&'a FittedScalers>,
    opts: BatchOptions,
) -> Result<BatchIter<'a>> {
    if opts.batch_size == 0 {
        return Err(BatchError::ZeroBatchSize);
    }
    Ok(BatchIter {
        store,
        map: &index.class_map,
        scalers,
        order: epoch_order(index.rows(split), opts.shuffle, opts.seed, opts.epoch),
        batch_size: opts.batch_size,
        pos: 0,
    })
}
