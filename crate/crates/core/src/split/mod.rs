//! Train, validation and test index construction.

mod apps;
mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use apps::{select_apps, AppSelection, ClassMap};
pub use persist::{index_path, sidecar_path, SPLIT_DIR};

use crate::config::{Scope, ValidatedConfig, ValidationPlan};
use crate::sample::{self, Stream};
use crate::store::{SizeTier, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid app selection: {reason}")]
    InvalidSelection { reason: String },
    #[error("top-x selection asks for {x} known classes but the train period has only {available}")]
    TopXTooLarge { x: usize, available: usize },
    #[error("{field} = {cap} exceeds the {available} eligible rows available")]
    CapTooLarge { field: &'static str, cap: u64, available: u64 },
    #[error("train period has no eligible rows (all rows are of unknown classes or outside the tier)")]
    EmptyTrain,
    #[error("split index {path}: {reason}")]
    CorruptIndex { path: String, reason: String },
    #[error("cannot write split index {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SplitError {
    pub fn kind(&self) -> &'static str {
        match self {
            SplitError::Store(_) => "StoreError",
            SplitError::InvalidSelection { .. } => "InvalidAppSelection",
            SplitError::TopXTooLarge { .. } => "TopXTooLarge",
            SplitError::CapTooLarge { .. } => "CapTooLarge",
            SplitError::EmptyTrain => "EmptyTrain",
            SplitError::CorruptIndex { .. } => "CorruptSplitIndex",
            SplitError::Io { .. } => "SplitIo",
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            SplitError::InvalidSelection { .. } => Some("app_selection"),
            SplitError::TopXTooLarge { .. } => Some("top_x"),
            SplitError::CapTooLarge { field, .. } => Some(field),
            SplitError::EmptyTrain => Some("train_period"),
            SplitError::Store(StoreError::TierTooLarge { .. }) => Some("size_tier"),
            _ => None,
        }
    }
}

pub type Result<T, E = SplitError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (train, val or test)")),
        }
    }
}

/// Rows per split on one date.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

/// Materialized, pairwise disjoint row sets, each ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndex {
    /// SPLIT-scope fingerprint of the config that produced the index.
    pub fingerprint: String,
    pub dataset_id: String,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
    pub class_map: ClassMap,
    pub per_date_counts: BTreeMap<NaiveDate, SplitCounts>,
    /// Test rows whose class is unknown.
    pub test_unknown: u64,
    pub warnings: Vec<String>,
}

impl SplitIndex {
    pub fn rows(&self, split: SplitName) -> &[u64] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Tier rows grouped by manifest date index, each group ascending.
#[derive(Debug, Clone)]
pub struct TierRows {
    by_date: Vec<Vec<u64>>,
}

impl TierRows {
    pub fn derive(store: &Store, tier: SizeTier, seed: u64) -> Result<Self> {
        Ok(TierRows {
            by_date: store.tier_rows_by_date(tier, seed)?,
        })
    }

    pub fn of_date(&self, date_idx: usize) -> &[u64] {
        &self.by_date[date_idx]
    }
}

/// A row with its class-map label id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabeledRow {
    pub row: u64,
    pub label: u32,
}

fn date_indices(store: &Store, dates: &[NaiveDate]) -> Vec<usize> {
    dates
        .iter()
        .map(|d| store.manifest().date_index(*d).expect("dates come from the manifest"))
        .collect()
}

/// Tier rows of one date, labelled through `map`.
fn labeled_rows(store: &Store, tier: &TierRows, date_idx: usize, map: &ClassMap) -> Result<Vec<LabeledRow>> {
    let p = store.partition(date_idx)?;
    let ids: Vec<u32> = p.labels.iter().map(|l| map.label_id(l)).collect();
    Ok(tier
        .of_date(date_idx)
        .iter()
        .map(|&row| {
            let (_, off) = store.locate(row).expect("tier rows exist");
            LabeledRow {
                row,
                label: ids[p.label_idx[off] as usize],
            }
        })
        .collect())
}

/// Per-class row counts of the tier rows on `dates`.
fn class_counts(store: &Store, tier: &TierRows, dates: &[usize]) -> Result<BTreeMap<String, u64>> {
    let mut out = BTreeMap::new();
    for &d in dates {
        let p = store.partition(d)?;
        let mut local = vec![0u64; p.labels.len()];
        for &row in tier.of_date(d) {
            let (_, off) = store.locate(row).expect("tier rows exist");
            local[p.label_idx[off] as usize] += 1;
        }
        for (name, n) in p.labels.iter().zip(local) {
            if n > 0 {
                *out.entry(name.clone()).or_insert(0) += n;
            }
        }
    }
    Ok(out)
}

/// Splits `cap` over dates in proportion to `weights`, never giving a date
/// more than `avail`. Dates whose quota exceeds their availability are
/// saturated and the shortfall is re-apportioned over the remaining dates
/// with positive weight. Returns `None` if the cap cannot be met.
pub fn allocate_weighted(cap: u64, weights: &[f64], avail: &[u64]) -> Option<Vec<u64>> {
    assert_eq!(weights.len(), avail.len());
    let mut quota = vec![0u64; avail.len()];
    let mut active: Vec<usize> = (0..avail.len()).filter(|&i| weights[i] > 0.0).collect();
    let mut remaining = cap;
    while remaining > 0 {
        if active.is_empty() {
            return None;
        }
        let w: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
        let share = sample::largest_remainder_weights(remaining, &w);
        let over: Vec<usize> = active
            .iter()
            .zip(&share)
            .filter(|(&i, &s)| s >= avail[i])
            .map(|(&i, _)| i)
            .collect();
        if over.is_empty() {
            for (&i, &s) in active.iter().zip(&share) {
                quota[i] = s;
            }
            break;
        }
        for &i in &over {
            quota[i] = avail[i];
            remaining -= avail[i];
        }
        active.retain(|i| !over.contains(i));
    }
    Some(quota)
}

/// Largest total that `weights` can draw without saturating any date.
fn weighted_capacity(weights: &[f64], avail: &[u64]) -> u64 {
    weights
        .iter()
        .zip(avail)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, &a)| (a as f64 / w).floor() as u64)
        .min()
        .unwrap_or(0)
}

/// What a per-date selection draws from.
struct Selection<'a> {
    dates: &'a [usize],
    weights: Option<&'a [f64]>,
    cap: Option<u64>,
    known_only: bool,
    /// Sorted rows that may not be picked.
    exclude: &'a [u64],
    stream: Stream,
    field: &'static str,
}

fn select(store: &Store, tier: &TierRows, map: &ClassMap, seed: u64, s: Selection<'_>) -> Result<Vec<LabeledRow>> {
    let unknown = map.unknown_id();
    let mut pools = Vec::with_capacity(s.dates.len());
    for &d in s.dates {
        let mut rows = labeled_rows(store, tier, d, map)?;
        rows.retain(|r| !(s.known_only && r.label == unknown) && s.exclude.binary_search(&r.row).is_err());
        pools.push(rows);
    }
    let avail: Vec<u64> = pools.iter().map(|p| p.len() as u64).collect();
    let total: u64 = avail.iter().sum();

    let quotas = match (s.cap, s.weights) {
        (None, None) => avail.clone(),
        (Some(cap), None) => {
            if cap > total {
                return Err(SplitError::CapTooLarge {
                    field: s.field,
                    cap,
                    available: total,
                });
            }
            sample::largest_remainder_counts(cap, &avail)
        }
        (cap, Some(w)) => {
            let cap = cap.unwrap_or_else(|| weighted_capacity(w, &avail));
            allocate_weighted(cap, w, &avail).ok_or_else(|| SplitError::CapTooLarge {
                field: s.field,
                cap,
                available: w.iter().zip(&avail).filter(|(w, _)| **w > 0.0).map(|(_, a)| a).sum(),
            })?
        }
    };

    let mut out = Vec::new();
    for (pool, q) in pools.iter().zip(quotas) {
        let labels: BTreeMap<u64, u32> = pool.iter().map(|r| (r.row, r.label)).collect();
        let rows: Vec<u64> = pool.iter().map(|r| r.row).collect();
        for row in sample::lowest_priority(&rows, q as usize, seed, s.stream) {
            out.push(LabeledRow { row, label: labels[&row] });
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Train rows before the validation split: known-class tier rows of the train
/// dates, capped and weighted per date.
pub fn build_train_index(
    store: &Store,
    tier: &TierRows,
    dates: &[NaiveDate],
    weights: Option<&[f64]>,
    cap: Option<u64>,
    map: &ClassMap,
    seed: u64,
) -> Result<Vec<LabeledRow>> {
    let idx = date_indices(store, dates);
    select(
        store,
        tier,
        map,
        seed,
        Selection {
            dates: &idx,
            weights,
            cap,
            known_only: true,
            exclude: &[],
            stream: Stream::Train,
            field: "train_size",
        },
    )
}

/// Validation rows drawn from dedicated dates: known classes only, no
/// weights, optional cap.
pub fn build_val_index(
    store: &Store,
    tier: &TierRows,
    dates: &[NaiveDate],
    cap: Option<u64>,
    map: &ClassMap,
    exclude: &[u64],
    seed: u64,
) -> Result<Vec<LabeledRow>> {
    let idx = date_indices(store, dates);
    select(
        store,
        tier,
        map,
        seed,
        Selection {
            dates: &idx,
            weights: None,
            cap,
            known_only: true,
            exclude,
            stream: Stream::Validation,
            field: "val_size",
        },
    )
}

/// Test rows of both known and unknown classes. `exclude` (sorted) holds rows
/// already used by train or validation, which only matters when periods
/// overlap.
pub fn build_test_index(
    store: &Store,
    tier: &TierRows,
    dates: &[NaiveDate],
    cap: Option<u64>,
    map: &ClassMap,
    exclude: &[u64],
    seed: u64,
) -> Result<Vec<LabeledRow>> {
    let idx = date_indices(store, dates);
    select(
        store,
        tier,
        map,
        seed,
        Selection {
            dates: &idx,
            weights: None,
            cap,
            known_only: false,
            exclude,
            stream: Stream::Test,
            field: "test_size",
        },
    )
}

/// Per-class validation counts for a stratified split. `counts[c]` is the
/// train size of class `c`, classes in name order. Each class gets
/// `floor(fraction * n)`; the rest of `round(fraction * N)` goes one row at a
/// time to the largest fractional parts, ties to the earlier class. Classes
/// with a single row get nothing and no class is emptied.
pub fn stratified_counts(fraction: f64, counts: &[u64]) -> Vec<u64> {
    let eligible: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] >= 2).collect();
    let n: u64 = eligible.iter().map(|&c| counts[c]).sum();
    let mut out = vec![0u64; counts.len()];
    let mut frac = Vec::with_capacity(eligible.len());
    for &c in &eligible {
        let ideal = fraction * counts[c] as f64;
        out[c] = (ideal.floor() as u64).min(counts[c] - 1);
        frac.push((ideal - ideal.floor(), c));
    }
    let target = (fraction * n as f64).round() as u64;
    let mut left = target.saturating_sub(out.iter().sum());
    frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in &frac {
        if left == 0 {
            break;
        }
        if out[c] + 1 < counts[c] {
            out[c] += 1;
            left -= 1;
        }
    }
    out
}

/// Result of a stratified validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit {
    pub train: Vec<LabeledRow>,
    pub val: Vec<LabeledRow>,
    pub warnings: Vec<String>,
}

/// Stratified split of `train` (labels are class-map ids) into train and
/// validation. Within a class the lowest-priority rows go to validation.
pub fn split_validation(train: &[LabeledRow], fraction: f64, map: &ClassMap, seed: u64) -> ValidationSplit {
    let mut by_class: Vec<Vec<u64>> = vec![Vec::new(); map.n_known()];
    for r in train {
        by_class[r.label as usize].push(r.row);
    }
    let counts: Vec<u64> = by_class.iter().map(|c| c.len() as u64).collect();
    let want = stratified_counts(fraction, &counts);
    let mut warnings = Vec::new();
    let singletons: Vec<&str> = (0..counts.len())
        .filter(|&c| counts[c] == 1)
        .map(|c| map.name_of(c as u32).unwrap_or("?"))
        .collect();
    if !singletons.is_empty() {
        warnings.push(format!(
            "classes with a single train sample stay in train: {}",
            singletons.join(", ")
        ));
    }
    let mut val_rows: Vec<u64> = Vec::new();
    for (rows, &k) in by_class.iter().zip(&want) {
        val_rows.extend(sample::lowest_priority(rows, k as usize, seed, Stream::Validation));
    }
    val_rows.sort_unstable();
    if val_rows.is_empty() && !train.is_empty() {
        warnings.push(format!("val_fraction {fraction} leaves the validation set empty"));
    }
    let (val, rest): (Vec<LabeledRow>, Vec<LabeledRow>) =
        train.iter().partition(|r| val_rows.binary_search(&r.row).is_ok());
    ValidationSplit {
        train: rest,
        val,
        warnings,
    }
}

/// The class map and pre-validation train rows of a config. Scalers are
/// fitted on these rows so they do not depend on how validation is carved
/// out.
#[derive(Debug, Clone)]
pub struct TrainPool {
    pub tier: TierRows,
    pub class_map: ClassMap,
    pub rows: Vec<LabeledRow>,
    pub warnings: Vec<String>,
}

pub fn train_pool(cfg: &ValidatedConfig, store: &Store) -> Result<TrainPool> {
    let tier = TierRows::derive(store, cfg.size_tier, cfg.seed)?;
    let train_idx = date_indices(store, &cfg.train_dates);
    let counts = class_counts(store, &tier, &train_idx)?;
    if counts.is_empty() {
        return Err(SplitError::EmptyTrain);
    }
    let (mut class_map, mut warnings) = select_apps(&counts, &cfg.app_selection)?;
    let mut all_dates: Vec<usize> = train_idx;
    all_dates.extend(date_indices(store, &cfg.test_dates));
    all_dates.extend(date_indices(store, cfg.val_dates()));
    all_dates.sort_unstable();
    all_dates.dedup();
    let observed: BTreeSet<String> = class_counts(store, &tier, &all_dates)?.into_keys().collect();
    let late = class_map.cover(&observed, &cfg.app_selection);
    if !late.is_empty() && !matches!(cfg.app_selection, AppSelection::AllKnown) {
        warnings.push(format!(
            "classes absent from the train period are unknown: {}",
            late.join(", ")
        ));
    }
    let rows = build_train_index(
        store,
        &tier,
        &cfg.train_dates,
        cfg.train_weights.as_deref(),
        cfg.train_size,
        &class_map,
        cfg.seed,
    )?;
    if rows.is_empty() {
        return Err(SplitError::EmptyTrain);
    }
    Ok(TrainPool {
        tier,
        class_map,
        rows,
        warnings,
    })
}

/// Builds the full split for `cfg`.
pub fn materialize(cfg: &ValidatedConfig, store: &Store) -> Result<SplitIndex> {
    let pool = train_pool(cfg, store)?;
    let mut warnings = pool.warnings;
    let (train, val) = match &cfg.validation {
        ValidationPlan::SplitFromTrain { fraction } => {
            let s = split_validation(&pool.rows, *fraction, &pool.class_map, cfg.seed);
            warnings.extend(s.warnings);
            (s.train, s.val)
        }
        ValidationPlan::SeparateDates { dates } => {
            let exclude: Vec<u64> = pool.rows.iter().map(|r| r.row).collect();
            let val = build_val_index(store, &pool.tier, dates, cfg.val_size, &pool.class_map, &exclude, cfg.seed)?;
            if val.is_empty() {
                warnings.push("validation dates hold no known-class rows; validation set is empty".into());
            }
            (pool.rows, val)
        }
    };
    let mut used: Vec<u64> = train.iter().chain(&val).map(|r| r.row).collect();
    used.sort_unstable();
    let test = build_test_index(store, &pool.tier, &cfg.test_dates, cfg.test_size, &pool.class_map, &used, cfg.seed)?;

    let unknown = pool.class_map.unknown_id();
    let mut per_date_counts: BTreeMap<NaiveDate, SplitCounts> = BTreeMap::new();
    for (rows, split) in [(&train, SplitName::Train), (&val, SplitName::Val), (&test, SplitName::Test)] {
        for r in rows {
            let date = store.date_of(r.row).expect("rows come from the store");
            let c = per_date_counts.entry(date).or_default();
            match split {
                SplitName::Train => c.train += 1,
                SplitName::Val => c.val += 1,
                SplitName::Test => c.test += 1,
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let ids = |v: &[LabeledRow]| v.iter().map(|r| r.row).collect::<Vec<u64>>();
    Ok(SplitIndex {
        fingerprint: cfg.fingerprint(Scope::Split),
        dataset_id: cfg.dataset_id.clone(),
        train: ids(&train),
        val: ids(&val),
        test_unknown: test.iter().filter(|r| r.label == unknown).count() as u64,
        test: ids(&test),
        class_map: pool.class_map,
        per_date_counts,
        warnings,
    })
}

/// Loads the persisted split for `cfg` if a valid one exists, otherwise
/// materializes and persists it. The flag reports a cache hit.
pub fn materialize_cached(cfg: &ValidatedConfig, store: &Store) -> Result<(SplitIndex, bool)> {
    let fp = cfg.fingerprint(Scope::Split);
    match SplitIndex::load(store.root(), &fp) {
        Ok(Some(index)) => return Ok((index, true)),
        Ok(None) => {}
        Err(e) => log::warn!("ignoring unreadable cached split: {e}"),
    }
    let index = materialize(cfg, store)?;
    index.save(store.root())?;
    Ok((index, false))
}
