//! Synthetic stores with controllable class mix, drift and novel classes.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sample::{self, mix64};
use crate::store::{FlowRecord, StoreBuilder, StoreError, StoreManifest, TierTargets, DEFAULT_L_PPI, DEFAULT_STAT_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl SynthError {
    pub fn kind(&self) -> &'static str {
        match self {
            SynthError::Invalid { .. } => "InvalidSynthSpec",
            SynthError::Store(StoreError::AlreadyExists(_)) => "AlreadyExists",
            SynthError::Store(_) => "StoreError",
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            SynthError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Generative parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    /// Mean payload size in bytes before any drift.
    pub mean_size: f64,
    pub size_spread: f64,
    pub mean_ipt_ms: f64,
    /// Mean number of packets per flow (geometric law, capped at L_ppi).
    pub mean_packets: f64,
}

/// From `date` on, the packet sizes of a `fraction` of the classes shift by
/// `size_shift` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub date: NaiveDate,
    pub fraction: f64,
    pub size_shift: f64,
}

/// `class` has no rows before `first_date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelArrival {
    pub class: String,
    pub first_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dataset_id: String,
    pub dates: Vec<NaiveDate>,
    pub rows_per_date: u64,
    /// Class `i` (by rank) gets weight `(i + 1)^-exponent`.
    #[serde(default = "default_exponent")]
    pub popularity_exponent: f64,
    pub classes: Vec<SynthClass>,
    #[serde(default)]
    pub drift_events: Vec<DriftEvent>,
    #[serde(default)]
    pub novel_arrivals: Vec<NovelArrival>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_l_ppi")]
    pub l_ppi: usize,
    /// Desk-scale tier targets; 10/25/50/75% of the rows when absent.
    #[serde(default)]
    pub tier_targets: Option<TierTargets>,
}

fn default_exponent() -> f64 {
    1.0
}

fn default_l_ppi() -> usize {
    DEFAULT_L_PPI
}

/// Class names `app00`, `app01`, ... padded to a common width.
pub fn class_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("app{i:0width$}")).collect()
}

/// Seeded class parameters. Mean sizes are spread evenly over 200..800
/// bytes in a shuffled order so classes stay separable.
pub fn generate_classes(n: usize, seed: u64) -> Vec<SynthClass> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x636c_6173_7365_7300));
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    class_names(n)
        .into_iter()
        .zip(slots)
        .map(|(name, slot)| {
            let pos = if n > 1 { slot as f64 / (n - 1) as f64 } else { 0.5 };
            SynthClass {
                name,
                mean_size: 200.0 + 600.0 * pos,
                size_spread: rng.random_range(20.0..60.0),
                mean_ipt_ms: 10f64.powf(rng.random_range(0.0..2.0)),
                mean_packets: rng.random_range(5.0..20.0),
            }
        })
        .collect()
}

impl SynthSpec {
    /// Spec with generated classes, no drift and no arrivals.
    pub fn new(dataset_id: impl Into<String>, n_classes: usize, dates: Vec<NaiveDate>, rows_per_date: u64, seed: u64) -> Self {
        SynthSpec {
            dataset_id: dataset_id.into(),
            dates,
            rows_per_date,
            popularity_exponent: default_exponent(),
            classes: generate_classes(n_classes, seed),
            drift_events: Vec::new(),
            novel_arrivals: Vec::new(),
            seed,
            l_ppi: DEFAULT_L_PPI,
            tier_targets: None,
        }
    }

    /// `n` consecutive dates starting at `start`.
    pub fn consecutive_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        start.iter_days().take(n).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dataset_id.is_empty() {
            return Err(invalid("dataset_id", "must not be empty"));
        }
        if self.classes.is_empty() {
            return Err(invalid("classes", "need at least one class"));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty()) {
            return Err(invalid("classes", "class names must be unique and non-empty"));
        }
        for c in &self.classes {
            let ok = c.mean_size.is_finite()
                && c.size_spread.is_finite()
                && c.size_spread >= 0.0
                && c.mean_ipt_ms.is_finite()
                && c.mean_ipt_ms > 0.0
                && c.mean_packets >= 1.0;
            if !ok {
                return Err(invalid("classes", format!("bad parameters for class {}", c.name)));
            }
        }
        if self.dates.is_empty() || self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("dates", "must be non-empty and strictly ascending"));
        }
        if self.rows_per_date == 0 {
            return Err(invalid("rows_per_date", "must be positive"));
        }
        if !(self.popularity_exponent.is_finite() && self.popularity_exponent >= 0.0) {
            return Err(invalid("popularity_exponent", "must be a non-negative number"));
        }
        if self.l_ppi == 0 || self.l_ppi > u16::MAX as usize {
            return Err(invalid("l_ppi", "must lie in 1..=65535"));
        }
        for e in &self.drift_events {
            if self.dates.binary_search(&e.date).is_err() {
                return Err(invalid("drift_events", format!("drift date {} is not a generated date", e.date)));
            }
            if !(0.0..=1.0).contains(&e.fraction) {
                return Err(invalid("drift_events", format!("fraction {} outside [0, 1]", e.fraction)));
            }
            if !e.size_shift.is_finite() {
                return Err(invalid("drift_events", "size shift must be finite"));
            }
        }
        for a in &self.novel_arrivals {
            if !names.contains(&a.class.as_str()) {
                return Err(invalid("novel_arrivals", format!("unknown class {}", a.class)));
            }
            if self.dates.binary_search(&a.first_date).is_err() {
                return Err(invalid("novel_arrivals", format!("arrival date {} is not a generated date", a.first_date)));
            }
        }
        Ok(())
    }

    /// Classes shifted by drift event `k`, chosen by hash rank.
    pub fn drifted_classes(&self, k: usize) -> Vec<usize> {
        let e = &self.drift_events[k];
        let n = self.classes.len();
        let take = (e.fraction * n as f64).round() as usize;
        let salt = mix64(self.seed ^ mix64(k as u64 + 0x6472_6966_7400_0000));
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by_key(|&c| (mix64(salt ^ c as u64), c));
        ranked.truncate(take);
        ranked.sort_unstable();
        ranked
    }

    /// Size shift of every class on `date`.
    pub fn size_shifts(&self, date: NaiveDate) -> Vec<f64> {
        let mut shift = vec![0.0; self.classes.len()];
        for (k, e) in self.drift_events.iter().enumerate() {
            if date >= e.date {
                for c in self.drifted_classes(k) {
                    shift[c] += e.size_shift;
                }
            }
        }
        shift
    }

    /// Rows of each class on `date`: popularity weights over the classes
    /// that have arrived, apportioned by largest remainder.
    pub fn class_counts(&self, date: NaiveDate) -> Vec<u64> {
        let arrival: BTreeMap<&str, NaiveDate> = self
            .novel_arrivals
            .iter()
            .map(|a| (a.class.as_str(), a.first_date))
            .collect();
        let weights: Vec<f64> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| match arrival.get(c.name.as_str()) {
                Some(first) if date < *first => 0.0,
                _ => ((i + 1) as f64).powf(-self.popularity_exponent),
            })
            .collect();
        sample::largest_remainder_weights(self.rows_per_date, &weights)
    }
}

/// Flat, all-optional form of a [`SynthSpec`], read from a TOML file (at
/// the top level or under a `[synth]` table) or assembled from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDocument {
    pub dataset_id: Option<String>,
    pub n_classes: Option<usize>,
    pub start_date: Option<NaiveDate>,
    pub n_dates: Option<usize>,
    pub dates: Option<Vec<NaiveDate>>,
    pub rows_per_date: Option<u64>,
    pub popularity_exponent: Option<f64>,
    pub seed: Option<u64>,
    pub l_ppi: Option<usize>,
    pub tier_targets: Option<String>,
    pub drift_events: Option<Vec<DriftEvent>>,
    pub novel_arrivals: Option<Vec<NovelArrival>>,
    pub classes: Option<Vec<SynthClass>>,
}

impl SynthDocument {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| invalid("spec", e.to_string()))?;
        let table = match table.get("synth") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => table,
        };
        table.try_into().map_err(|e: toml::de::Error| invalid("spec", e.to_string()))
    }

    /// Copies every key set in `other` over this document.
    pub fn overlay(&mut self, other: SynthDocument) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            dataset_id, n_classes, start_date, n_dates, dates, rows_per_date, popularity_exponent,
            seed, l_ppi, tier_targets, drift_events, novel_arrivals, classes
        );
    }

    pub fn into_spec(self) -> Result<SynthSpec, SynthError> {
        let seed = self.seed.unwrap_or(0);
        let dates = match (self.dates, self.start_date) {
            (Some(d), _) => d,
            (None, Some(start)) => SynthSpec::consecutive_dates(start, self.n_dates.unwrap_or(14)),
            (None, None) => return Err(invalid("start_date", "either dates or start_date is required")),
        };
        let classes = match (self.classes, self.n_classes) {
            (Some(c), _) => c,
            (None, Some(n)) => generate_classes(n, seed),
            (None, None) => return Err(invalid("n_classes", "either classes or n_classes is required")),
        };
        let tier_targets = self
            .tier_targets
            .map(|t| t.parse::<TierTargets>().map_err(|e| invalid("tier_targets", e)))
            .transpose()?;
        let spec = SynthSpec {
            dataset_id: self.dataset_id.ok_or_else(|| invalid("dataset_id", "required"))?,
            dates,
            rows_per_date: self.rows_per_date.ok_or_else(|| invalid("rows_per_date", "required"))?,
            popularity_exponent: self.popularity_exponent.unwrap_or_else(default_exponent),
            classes,
            drift_events: self.drift_events.unwrap_or_default(),
            novel_arrivals: self.novel_arrivals.unwrap_or_default(),
            seed,
            l_ppi: self.l_ppi.unwrap_or(DEFAULT_L_PPI),
            tier_targets,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn flow(class: &SynthClass, shift: f64, l_ppi: usize, date: NaiveDate, rng: &mut ChaCha8Rng) -> FlowRecord {
    let geo = Geometric::new(1.0 / class.mean_packets).expect("mean_packets >= 1");
    let n = (1 + geo.sample(rng) as usize).min(l_ppi);
    let size = Normal::new(class.mean_size + shift, class.size_spread).expect("finite spread");
    let ipt = Exp::new(1.0 / class.mean_ipt_ms).expect("positive mean");
    let mut sizes = Vec::with_capacity(n);
    let mut ipts = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    for i in 0..n {
        sizes.push(size.sample(rng).round().clamp(0.0, 1500.0) as u16);
        ipts.push(if i == 0 { 0.0 } else { ipt.sample(rng) });
        dirs.push(if i == 0 || rng.random_bool(0.5) { 1i8 } else { -1 });
    }
    let stats = flow_stats(&sizes, &ipts, &dirs);
    FlowRecord {
        row_id: 0,
        date,
        label: class.name.clone(),
        ppi_sizes: sizes,
        ppi_ipt: ipts,
        ppi_dirs: dirs,
        flow_stats: stats,
    }
}

/// The default statistics computed from a flow's sequences.
pub fn flow_stats(sizes: &[u16], ipt: &[f64], dirs: &[i8]) -> Vec<f64> {
    let n = sizes.len() as f64;
    let (mut pf, mut pr, mut bf, mut br) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &d) in sizes.iter().zip(dirs) {
        if d > 0 {
            pf += 1.0;
            bf += f64::from(s);
        } else {
            pr += 1.0;
            br += f64::from(s);
        }
    }
    let mean = (bf + br) / n;
    let var = sizes.iter().map(|&s| (f64::from(s) - mean).powi(2)).sum::<f64>() / n;
    let total_ipt: f64 = ipt.iter().sum();
    let mean_ipt = if ipt.len() > 1 { total_ipt / (ipt.len() - 1) as f64 } else { 0.0 };
    vec![total_ipt / 1000.0, pf, pr, bf, br, mean, var.sqrt(), mean_ipt]
}

/// Records of one date, in generation order.
pub fn generate_date(spec: &SynthSpec, date: NaiveDate) -> Vec<FlowRecord> {
    let days = date.signed_duration_since(NaiveDate::MIN).num_days() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ mix64(days)));
    let shifts = spec.size_shifts(date);
    let mut out = Vec::with_capacity(spec.rows_per_date as usize);
    for (c, &k) in spec.class_counts(date).iter().enumerate() {
        for _ in 0..k {
            out.push(flow(&spec.classes[c], shifts[c], spec.l_ppi, date, &mut rng));
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Writes a synthetic store to `out`.
pub fn generate(spec: &SynthSpec, out: &Path, overwrite: bool) -> Result<StoreManifest, SynthError> {
    spec.validate()?;
    if out.join(crate::store::MANIFEST_FILE).exists() && !overwrite {
        return Err(StoreError::AlreadyExists(out.to_path_buf()).into());
    }
    let per_date: Vec<Vec<FlowRecord>> = spec.dates.par_iter().map(|&d| generate_date(spec, d)).collect();
    let total: u64 = per_date.iter().map(|v| v.len() as u64).sum();
    let targets = spec.tier_targets.unwrap_or_else(|| TierTargets::scaled_to(total));
    let names = DEFAULT_STAT_NAMES.iter().map(|s| s.to_string()).collect();
    let mut builder = StoreBuilder::new(spec.dataset_id.clone(), names, spec.l_ppi).tier_targets(Some(targets));
    for rec in per_date.into_iter().flatten() {
        builder.push(rec).map_err(|r| invalid("classes", r))?;
    }
    Ok(builder.finish(out, overwrite)?)
}
