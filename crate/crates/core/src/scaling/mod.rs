//! Clipping and scaling of the three feature groups: packet sizes,
//! inter-packet times and flow statistics.

mod cache;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cache::{cache_get, cache_path, cache_put, fit_cached, SCALER_DIR};
pub use stats::{quantile, PopulationMoments};

use crate::batching::FlowBatch;
use crate::sample::{self, Stream};
use crate::split::SplitError;
use crate::store::{Field, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ScalingError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("scaler fit sample is empty")]
    EmptyFitSample,
    #[error("non-finite value {value} in {field} of row {row}")]
    NonFinite { row: u64, field: String, value: f64 },
    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl ScalingError {
    pub fn kind(&self) -> &'static str {
        match self {
            ScalingError::Store(_) => "StoreError",
            ScalingError::Split(e) => e.kind(),
            ScalingError::EmptyFitSample => "EmptyFitSample",
            ScalingError::NonFinite { .. } => "NonFiniteValue",
            ScalingError::ShapeMismatch(_) => "ShapeMismatch",
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            ScalingError::Split(e) => e.field(),
            ScalingError::EmptyFitSample => Some("fit_fraction"),
            _ => None,
        }
    }
}

pub type Result<T, E = ScalingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Standard,
    Robust,
    #[serde(rename = "minmax")]
    MinMax,
    /// Clipping only.
    #[default]
    #[serde(rename = "none")]
    Identity,
}

impl ScalerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalerKind::Standard => "standard",
            ScalerKind::Robust => "robust",
            ScalerKind::MinMax => "minmax",
            ScalerKind::Identity => "none",
        }
    }
}

impl fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "standard" => Ok(ScalerKind::Standard),
            "robust" => Ok(ScalerKind::Robust),
            "minmax" => Ok(ScalerKind::MinMax),
            "none" | "identity" => Ok(ScalerKind::Identity),
            other => Err(format!("unknown scaler `{other}` (standard, robust, minmax or none)")),
        }
    }
}

pub const DEFAULT_FIT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Fraction of the train rows used for fitting, in (0, 1].
    pub fit_fraction: f64,
    pub psizes_scaler: ScalerKind,
    /// Sizes above this are replaced by it.
    pub psizes_max_clip: Option<f64>,
    pub ipt_scaler: ScalerKind,
    pub ipt_min_clip: Option<f64>,
    pub ipt_max_clip: Option<f64>,
    pub fstats_scaler: ScalerKind,
    /// Each statistic is clipped at its q-quantile over the fit sample.
    pub fstats_quantile_clip_q: Option<f64>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            fit_fraction: DEFAULT_FIT_FRACTION,
            psizes_scaler: ScalerKind::Identity,
            psizes_max_clip: None,
            ipt_scaler: ScalerKind::Identity,
            ipt_min_clip: None,
            ipt_max_clip: None,
            fstats_scaler: ScalerKind::Identity,
            fstats_quantile_clip_q: None,
        }
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:?}"))
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.fit_fraction > 0.0 && self.fit_fraction <= 1.0) {
            return Err(("fit_fraction", format!("must lie in (0, 1], got {}", self.fit_fraction)));
        }
        for (field, v) in [
            ("psizes_max_clip", self.psizes_max_clip),
            ("ipt_min_clip", self.ipt_min_clip),
            ("ipt_max_clip", self.ipt_max_clip),
        ] {
            if let Some(x) = v {
                if !(x.is_finite() && x >= 0.0) {
                    return Err((field, format!("must be a non-negative number, got {x}")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.ipt_min_clip, self.ipt_max_clip) {
            if lo > hi {
                return Err(("ipt_min_clip", format!("{lo} exceeds ipt_max_clip {hi}")));
            }
        }
        if let Some(q) = self.fstats_quantile_clip_q {
            if !(q > 0.0 && q < 1.0) {
                return Err(("fstats_quantile_clip_q", format!("must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }

    /// Key/value pairs that identify this config in fingerprints.
    pub fn canonical_fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("fit_fraction", format!("{:?}", self.fit_fraction)),
            ("psizes_scaler", self.psizes_scaler.to_string()),
            ("psizes_max_clip", opt_real(self.psizes_max_clip)),
            ("ipt_scaler", self.ipt_scaler.to_string()),
            ("ipt_min_clip", opt_real(self.ipt_min_clip)),
            ("ipt_max_clip", opt_real(self.ipt_max_clip)),
            ("fstats_scaler", self.fstats_scaler.to_string()),
            ("fstats_quantile_clip_q", opt_real(self.fstats_quantile_clip_q)),
        ]
    }
}

/// Fitted parameters, one entry per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScalerParams {
    Standard { mean: Vec<f64>, std: Vec<f64> },
    Robust { median: Vec<f64>, iqr: Vec<f64> },
    #[serde(rename = "minmax")]
    MinMax { min: Vec<f64>, max: Vec<f64> },
    #[serde(rename = "none")]
    Identity,
}

impl ScalerParams {
    pub fn kind(&self) -> ScalerKind {
        match self {
            ScalerParams::Standard { .. } => ScalerKind::Standard,
            ScalerParams::Robust { .. } => ScalerKind::Robust,
            ScalerParams::MinMax { .. } => ScalerKind::MinMax,
            ScalerParams::Identity => ScalerKind::Identity,
        }
    }

    /// Fits `kind` on one feature's values, already clipped.
    fn fit_one(kind: ScalerKind, values: &mut [f64]) -> (f64, f64) {
        let nonzero = |s: f64| if s == 0.0 { 1.0 } else { s };
        match kind {
            ScalerKind::Standard => {
                let m = PopulationMoments::from_slice(values);
                (m.mean(), nonzero(m.std()))
            }
            ScalerKind::Robust => {
                let med = quantile(values, 0.5);
                let iqr = quantile(values, 0.75) - quantile(values, 0.25);
                (med, nonzero(iqr))
            }
            ScalerKind::MinMax => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            ScalerKind::Identity => (0.0, 1.0),
        }
    }

    /// Fits one scaler per column.
    pub fn fit(kind: ScalerKind, columns: &mut [Vec<f64>]) -> Self {
        let (a, b): (Vec<f64>, Vec<f64>) = columns.iter_mut().map(|c| Self::fit_one(kind, c)).unzip();
        match kind {
            ScalerKind::Standard => ScalerParams::Standard { mean: a, std: b },
            ScalerKind::Robust => ScalerParams::Robust { median: a, iqr: b },
            ScalerKind::MinMax => ScalerParams::MinMax { min: a, max: b },
            ScalerKind::Identity => ScalerParams::Identity,
        }
    }

    /// Scales one already clipped value of `feature`.
    #[inline]
    pub fn apply(&self, feature: usize, x: f64) -> f64 {
        match self {
            ScalerParams::Standard { mean, std } => (x - mean[feature]) / std[feature],
            ScalerParams::Robust { median, iqr } => (x - median[feature]) / iqr[feature],
            ScalerParams::MinMax { min, max } => {
                let (lo, hi) = (min[feature], max[feature]);
                let range = if hi > lo { hi - lo } else { 1.0 };
                (x.clamp(lo, hi) - lo) / range
            }
            ScalerParams::Identity => x,
        }
    }
}

/// Clip bounds and scaler of one feature group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScaler {
    pub params: ScalerParams,
    /// Per feature; `None` means unbounded.
    pub clip_min: Vec<Option<f64>>,
    pub clip_max: Vec<Option<f64>>,
}

impl GroupScaler {
    pub fn n_features(&self) -> usize {
        self.clip_min.len()
    }

    #[inline]
    pub fn clip(&self, feature: usize, mut x: f64) -> f64 {
        if let Some(lo) = self.clip_min[feature] {
            x = x.max(lo);
        }
        if let Some(hi) = self.clip_max[feature] {
            x = x.min(hi);
        }
        x
    }

    /// Clip, then scale.
    #[inline]
    pub fn transform(&self, feature: usize, x: f64) -> f64 {
        self.params.apply(feature, self.clip(feature, x))
    }
}

/// The three fitted group scalers plus fit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScalers {
    /// SCALERS-scope fingerprint; empty when fitted outside a config.
    pub fingerprint: String,
    pub config: ScalingConfig,
    pub l_ppi: usize,
    pub stat_names: Vec<String>,
    pub train_rows: u64,
    pub fit_sample_size: u64,
    pub psizes: GroupScaler,
    pub ipt: GroupScaler,
    pub fstats: GroupScaler,
}

fn check_finite(row: u64, field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ScalingError::NonFinite {
            row,
            field: field.to_string(),
            value: x,
        })
    }
}

/// Size of the fit sample for `n` train rows.
pub fn fit_sample_size(fit_fraction: f64, n: usize) -> usize {
    ((fit_fraction * n as f64).ceil() as usize).min(n)
}

/// Fits the scalers on a stable-priority sample of `train`.
pub fn fit_scalers(store: &Store, train: &[u64], cfg: &ScalingConfig, seed: u64) -> Result<FittedScalers> {
    let k = fit_sample_size(cfg.fit_fraction, train.len());
    if k == 0 {
        return Err(ScalingError::EmptyFitSample);
    }
    let sample = sample::lowest_priority(train, k, seed, Stream::ScalerFit);
    let t = store.read_rows(&sample, &[Field::PpiSizes, Field::PpiIpt, Field::FlowStats])?;
    let (l, f) = (t.l_ppi, t.stat_names.len());
    let valid = t.valid_len.as_deref().expect("sequence fields requested");
    let sizes = t.ppi_sizes.as_deref().expect("requested");
    let ipt = t.ppi_ipt.as_deref().expect("requested");
    let stats = t.flow_stats.as_deref().expect("requested");

    let size_clip = GroupScaler {
        params: ScalerParams::Identity,
        clip_min: vec![None],
        clip_max: vec![cfg.psizes_max_clip],
    };
    let ipt_clip = GroupScaler {
        params: ScalerParams::Identity,
        clip_min: vec![cfg.ipt_min_clip],
        clip_max: vec![cfg.ipt_max_clip],
    };
    let mut size_vals = Vec::new();
    let mut ipt_vals = Vec::new();
    for (i, &row) in t.row_ids.iter().enumerate() {
        for j in 0..valid[i] as usize {
            size_vals.push(size_clip.clip(0, f64::from(sizes[i * l + j])));
            let x = ipt[i * l + j];
            check_finite(row, "ppi_ipt_ms", x)?;
            ipt_vals.push(ipt_clip.clip(0, x));
        }
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(k); f];
    for (i, &row) in t.row_ids.iter().enumerate() {
        for (s, col) in columns.iter_mut().enumerate() {
            let x = stats[i * f + s];
            check_finite(row, &t.stat_names[s], x)?;
            col.push(x);
        }
    }
    let thresholds: Vec<Option<f64>> = columns
        .iter_mut()
        .map(|c| cfg.fstats_quantile_clip_q.map(|q| quantile(c, q)))
        .collect();
    for (c, th) in columns.iter_mut().zip(&thresholds) {
        if let Some(th) = th {
            for x in c.iter_mut() {
                *x = x.min(*th);
            }
        }
    }

    let fit_group = |kind, values: Vec<f64>, clip: GroupScaler| {
        let mut cols = vec![values];
        let params = if cols[0].is_empty() {
            ScalerParams::fit(kind, &mut [vec![0.0]])
        } else {
            ScalerParams::fit(kind, &mut cols)
        };
        GroupScaler { params, ..clip }
    };
    Ok(FittedScalers {
        fingerprint: String::new(),
        config: cfg.clone(),
        l_ppi: l,
        stat_names: t.stat_names.clone(),
        train_rows: train.len() as u64,
        fit_sample_size: k as u64,
        psizes: fit_group(cfg.psizes_scaler, size_vals, size_clip),
        ipt: fit_group(cfg.ipt_scaler, ipt_vals, ipt_clip),
        fstats: GroupScaler {
            params: ScalerParams::fit(cfg.fstats_scaler, &mut columns),
            clip_min: vec![None; f],
            clip_max: thresholds,
        },
    })
}

impl FittedScalers {
    /// Clips and scales a batch. Padding stays zero.
    pub fn transform(&self, batch: &FlowBatch) -> Result<FlowBatch> {
        if batch.l_ppi != self.l_ppi || batch.n_stats != self.stat_names.len() {
            return Err(ScalingError::ShapeMismatch(format!(
                "batch has L_ppi={} and {} statistics, scalers expect {} and {}",
                batch.l_ppi,
                batch.n_stats,
                self.l_ppi,
                self.stat_names.len()
            )));
        }
        batch.check_shape().map_err(ScalingError::ShapeMismatch)?;
        let mut out = batch.clone();
        let l = batch.l_ppi;
        for (i, &n) in batch.valid_len.iter().enumerate() {
            for j in 0..n as usize {
                let at = i * l + j;
                out.psizes[at] = self.psizes.transform(0, batch.psizes[at]);
                out.ipt[at] = self.ipt.transform(0, batch.ipt[at]);
            }
        }
        let f = batch.n_stats;
        for (at, x) in out.fstats.iter_mut().enumerate() {
            *x = self.fstats.transform(at % f, *x);
        }
        out.scaled = true;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit1(kind: ScalerKind, v: &[f64]) -> ScalerParams {
        ScalerParams::fit(kind, &mut [v.to_vec()])
    }

    #[test]
    fn standard_on_one_two_three() {
        let p = fit1(ScalerKind::Standard, &[1.0, 2.0, 3.0]);
        let ScalerParams::Standard { mean, std } = &p else { panic!() };
        assert_eq!(mean[0], 2.0);
        assert!((std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(p.apply(0, 2.0), 0.0);
    }

    #[test]
    fn robust_with_outlier() {
        let p = fit1(ScalerKind::Robust, &[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(
            p,
            ScalerParams::Robust {
                median: vec![3.0],
                iqr: vec![2.0]
            }
        );
        assert_eq!(p.apply(0, 5.0), 1.0);
    }

    #[test]
    fn minmax_on_constant_column() {
        let p = fit1(ScalerKind::MinMax, &[7.0, 7.0, 7.0]);
        assert_eq!(p.apply(0, 7.0), 0.0);
        assert_eq!(p.apply(0, 9.0), 0.0);
        let p = fit1(ScalerKind::MinMax, &[0.0, 10.0]);
        assert_eq!(p.apply(0, -5.0), 0.0);
        assert_eq!(p.apply(0, 15.0), 1.0);
    }

    #[test]
    fn degenerate_scales_become_one() {
        let ScalerParams::Standard { std, .. } = fit1(ScalerKind::Standard, &[4.0; 5]) else { panic!() };
        assert_eq!(std, vec![1.0]);
        let ScalerParams::Robust { iqr, .. } = fit1(ScalerKind::Robust, &[4.0; 5]) else { panic!() };
        assert_eq!(iqr, vec![1.0]);
    }

    #[test]
    fn clip_semantics() {
        let sizes = GroupScaler {
            params: ScalerParams::Identity,
            clip_min: vec![None],
            clip_max: vec![Some(1500.0)],
        };
        assert_eq!(sizes.transform(0, 9000.0), 1500.0);
        let ipt = GroupScaler {
            params: ScalerParams::Identity,
            clip_min: vec![Some(1.0)],
            clip_max: vec![None],
        };
        assert_eq!(ipt.transform(0, 0.2), 1.0);
    }

    #[test]
    fn quantile_clip_threshold() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        let th = quantile(&mut v, 0.95);
        assert!((th - 95.05).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = ScalingConfig::default();
        assert!(c.validate().is_ok());
        c.fit_fraction = 0.0;
        assert_eq!(c.validate().unwrap_err().0, "fit_fraction");
        c.fit_fraction = 1.0;
        c.ipt_min_clip = Some(5.0);
        c.ipt_max_clip = Some(1.0);
        assert_eq!(c.validate().unwrap_err().0, "ipt_min_clip");
        c.ipt_max_clip = None;
        c.fstats_quantile_clip_q = Some(1.0);
        assert_eq!(c.validate().unwrap_err().0, "fstats_quantile_clip_q");
    }

    #[test]
    fn kind_names() {
        for k in [ScalerKind::Standard, ScalerKind::Robust, ScalerKind::MinMax, ScalerKind::Identity] {
            assert_eq!(k.as_str().parse::<ScalerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert_eq!("MIN_MAX".parse::<ScalerKind>().unwrap(), ScalerKind::MinMax);
    }

    proptest::proptest! {
        #[test]
        fn transforms_are_monotone(
            v in proptest::collection::vec(-1e3f64..1e3, 1..50),
            a in -2e3f64..2e3,
            b in -2e3f64..2e3,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in [ScalerKind::Standard, ScalerKind::Robust, ScalerKind::MinMax, ScalerKind::Identity] {
                let p = fit1(kind, &v);
                proptest::prop_assert!(p.apply(0, lo) <= p.apply(0, hi));
            }
        }
    }
}
