use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfigError, DatasetConfig, PeriodSpec, ValApproach};
use crate::scaling::{ScalerKind, ScalingConfig};
use crate::split::AppSelection;
use crate::store::SizeTier;

/// Flat key/value form of [`DatasetConfig`], as read from a TOML file or
/// assembled from command-line flags. Every key is optional; missing keys
/// take library defaults when the document is turned into a config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub dataset_id: Option<String>,
    pub size_tier: Option<String>,
    pub train_period: Option<String>,
    pub train_date_weights: Option<Vec<f64>>,
    pub test_period: Option<String>,
    pub val_approach: Option<String>,
    pub val_period: Option<String>,
    pub val_fraction: Option<f64>,
    pub app_selection: Option<String>,
    pub top_x: Option<usize>,
    pub unknown_apps: Option<Vec<String>>,
    pub known_apps: Option<Vec<String>>,
    pub fit_fraction: Option<f64>,
    pub psizes_scaler: Option<String>,
    pub psizes_max_clip: Option<f64>,
    pub ipt_scaler: Option<String>,
    pub ipt_min_clip: Option<f64>,
    pub ipt_max_clip: Option<f64>,
    pub fstats_scaler: Option<String>,
    pub fstats_quantile_clip_q: Option<f64>,
    pub seed: Option<u64>,
    pub strict_time_order: Option<bool>,
    pub train_size: Option<u64>,
    pub val_size: Option<u64>,
    pub test_size: Option<u64>,
}

fn parse<T: std::str::FromStr>(field: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::invalid(field, e.to_string()))
}

fn period(field: &'static str, raw: &str) -> Result<PeriodSpec, ConfigError> {
    raw.parse::<PeriodSpec>()
        .map_err(|source| ConfigError::Period { field, source })
}

macro_rules! overlay_fields {
    ($self:ident, $other:ident; $($f:ident),* $(,)?) => {
        $( if $other.$f.is_some() { $self.$f = $other.$f.clone(); } )*
    };
}

impl ConfigDocument {
    /// Every key a document accepts, in declaration order.
    pub const KEYS: [&'static str; 25] = [
        "dataset_id",
        "size_tier",
        "train_period",
        "train_date_weights",
        "test_period",
        "val_approach",
        "val_period",
        "val_fraction",
        "app_selection",
        "top_x",
        "unknown_apps",
        "known_apps",
        "fit_fraction",
        "psizes_scaler",
        "psizes_max_clip",
        "ipt_scaler",
        "ipt_min_clip",
        "ipt_max_clip",
        "fstats_scaler",
        "fstats_quantile_clip_q",
        "seed",
        "strict_time_order",
        "train_size",
        "val_size",
        "test_size",
    ];

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File {
            path: "<inline>".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config document serializes")
    }

    /// Copies every key set in `other` over this document.
    pub fn overlay(&mut self, other: &ConfigDocument) {
        overlay_fields!(self, other;
            dataset_id, size_tier, train_period, train_date_weights, test_period,
            val_approach, val_period, val_fraction, app_selection, top_x,
            unknown_apps, known_apps, fit_fraction, psizes_scaler, psizes_max_clip,
            ipt_scaler, ipt_min_clip, ipt_max_clip, fstats_scaler,
            fstats_quantile_clip_q, seed, strict_time_order, train_size, val_size,
            test_size,
        );
    }

    /// Builds a config, taking `default_dataset_id` when the document names
    /// none.
    pub fn into_config(self, default_dataset_id: &str) -> Result<DatasetConfig, ConfigError> {
        let train_period = self
            .train_period
            .as_deref()
            .ok_or_else(|| ConfigError::invalid("train_period", "required"))
            .and_then(|p| period("train_period", p))?;
        let test_period = self
            .test_period
            .as_deref()
            .ok_or_else(|| ConfigError::invalid("test_period", "required"))
            .and_then(|p| period("test_period", p))?;
        let mut cfg = DatasetConfig::new(
            self.dataset_id.clone().unwrap_or_else(|| default_dataset_id.to_string()),
            train_period,
            test_period,
        );
        if let Some(t) = &self.size_tier {
            cfg.size_tier = parse::<SizeTier>("size_tier", t)?;
        }
        cfg.train_date_weights = self.train_date_weights.clone();
        if let Some(v) = &self.val_approach {
            cfg.val_approach = parse::<ValApproach>("val_approach", v)?;
        }
        cfg.val_period = self.val_period.as_deref().map(|p| period("val_period", p)).transpose()?;
        if let Some(f) = self.val_fraction {
            cfg.val_fraction = f;
        }
        cfg.app_selection = self.app_selection()?;
        cfg.scaling = self.scaling()?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.strict_time_order {
            cfg.strict_time_order = s;
        }
        cfg.train_size = self.train_size;
        cfg.val_size = self.val_size;
        cfg.test_size = self.test_size;
        Ok(cfg)
    }

    fn app_selection(&self) -> Result<AppSelection, ConfigError> {
        let set = |v: &Option<Vec<String>>| -> BTreeSet<String> { v.iter().flatten().cloned().collect() };
        let mode = self
            .app_selection
            .as_deref()
            .unwrap_or("all-known")
            .trim()
            .to_ascii_lowercase()
            .replace('_', "-");
        match mode.as_str() {
            "all-known" => Ok(AppSelection::AllKnown),
            "top-x" => self
                .top_x
                .map(AppSelection::TopX)
                .ok_or_else(|| ConfigError::invalid("top_x", "required with app_selection = top-x")),
            "explicit-unknown" => Ok(AppSelection::ExplicitUnknown(set(&self.unknown_apps))),
            "fixed" => Ok(AppSelection::Fixed {
                known: set(&self.known_apps),
                unknown: set(&self.unknown_apps),
            }),
            other => Err(ConfigError::invalid(
                "app_selection",
                format!("unknown mode `{other}` (all-known, top-x, explicit-unknown, fixed)"),
            )),
        }
    }

    fn scaling(&self) -> Result<ScalingConfig, ConfigError> {
        let mut s = ScalingConfig::default();
        if let Some(f) = self.fit_fraction {
            s.fit_fraction = f;
        }
        if let Some(k) = &self.psizes_scaler {
            s.psizes_scaler = parse::<ScalerKind>("psizes_scaler", k)?;
        }
        if let Some(k) = &self.ipt_scaler {
            s.ipt_scaler = parse::<ScalerKind>("ipt_scaler", k)?;
        }
        if let Some(k) = &self.fstats_scaler {
            s.fstats_scaler = parse::<ScalerKind>("fstats_scaler", k)?;
        }
        s.psizes_max_clip = self.psizes_max_clip;
        s.ipt_min_clip = self.ipt_min_clip;
        s.ipt_max_clip = self.ipt_max_clip;
        s.fstats_quantile_clip_q = self.fstats_quantile_clip_q;
        Ok(s)
    }
}
