//! Experiment configuration: parsing, validation against a store, and
//! fingerprinting for cache keys.

mod document;
mod fingerprint;
mod period;
pub mod registry;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use document::ConfigDocument;
pub use fingerprint::{canonical_text, fingerprint, Scope};
pub use period::{parse_period, PeriodError, PeriodExpansion, PeriodItem, PeriodSpec};
pub use registry::{RegistryEntry, REGISTRY};

use crate::scaling::ScalingConfig;
use crate::split::AppSelection;
use crate::store::{SizeTier, StoreManifest};

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config names dataset `{found}` but the store holds `{expected}`")]
    UnknownDataset { expected: String, found: String },
    #[error("{field}: {source}")]
    Period {
        field: &'static str,
        #[source]
        source: PeriodError,
    },
    #[error("train/validation data must precede test data: last train/val date {last_train} is not before first test date {first_test}")]
    TimeOrderViolation { last_train: NaiveDate, first_test: NaiveDate },
    #[error("validation approach separate-dates requires val_period")]
    MissingValidationDates,
    #[error("validation dates overlap train dates: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "))]
    ValidationOverlap(Vec<NaiveDate>),
    #[error("train_date_weights has {found} entries but the train period has {expected} dates")]
    WeightLengthMismatch { expected: usize, found: usize },
    #[error("{field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    File { path: String, reason: String },
}

impl ConfigError {
    /// Error kind name, stable for machine consumption.
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::UnknownDataset { .. } => "UnknownDataset",
            ConfigError::Period { source: PeriodError::Empty { .. }, .. } => "EmptyPeriod",
            ConfigError::Period { .. } => "PeriodParse",
            ConfigError::TimeOrderViolation { .. } => "TimeOrderViolation",
            ConfigError::MissingValidationDates => "MissingValidationDates",
            ConfigError::ValidationOverlap(_) => "ValidationOverlap",
            ConfigError::WeightLengthMismatch { .. } => "WeightLengthMismatch",
            ConfigError::InvalidValue { .. } => "InvalidValue",
            ConfigError::File { .. } => "ConfigFile",
        }
    }

    /// The config field at fault, if any.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::UnknownDataset { .. } => Some("dataset_id"),
            ConfigError::Period { field, .. } => Some(field),
            ConfigError::TimeOrderViolation { .. } => Some("test_period"),
            ConfigError::MissingValidationDates | ConfigError::ValidationOverlap(_) => Some("val_period"),
            ConfigError::WeightLengthMismatch { .. } => Some("train_date_weights"),
            ConfigError::InvalidValue { field, .. } => Some(field),
            ConfigError::File { .. } => None,
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ValApproach {
    #[default]
    SplitFromTrain,
    SeparateDates,
}

impl ValApproach {
    pub fn as_str(self) -> &'static str {
        match self {
            ValApproach::SplitFromTrain => "split-from-train",
            ValApproach::SeparateDates => "separate-dates",
        }
    }
}

impl fmt::Display for ValApproach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValApproach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "split-from-train" => Ok(ValApproach::SplitFromTrain),
            "separate-dates" => Ok(ValApproach::SeparateDates),
            other => Err(format!("unknown validation approach `{other}` (split-from-train or separate-dates)")),
        }
    }
}

/// A complete experiment specification, before it is checked against a
/// store.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub dataset_id: String,
    pub size_tier: SizeTier,
    pub train_period: PeriodSpec,
    pub train_date_weights: Option<Vec<f64>>,
    pub test_period: PeriodSpec,
    pub val_approach: ValApproach,
    pub val_period: Option<PeriodSpec>,
    pub val_fraction: f64,
    pub app_selection: AppSelection,
    pub scaling: ScalingConfig,
    pub seed: u64,
    pub strict_time_order: bool,
    pub train_size: Option<u64>,
    pub val_size: Option<u64>,
    pub test_size: Option<u64>,
}

impl DatasetConfig {
    /// A config with library defaults for everything but the periods.
    pub fn new(dataset_id: impl Into<String>, train_period: PeriodSpec, test_period: PeriodSpec) -> Self {
        DatasetConfig {
            dataset_id: dataset_id.into(),
            size_tier: SizeTier::S,
            train_period,
            train_date_weights: None,
            test_period,
            val_approach: ValApproach::SplitFromTrain,
            val_period: None,
            val_fraction: DEFAULT_VAL_FRACTION,
            app_selection: AppSelection::AllKnown,
            scaling: ScalingConfig::default(),
            seed: DEFAULT_SEED,
            strict_time_order: true,
            train_size: None,
            val_size: None,
            test_size: None,
        }
    }
}

/// How the validation set is built, with periods already expanded.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationPlan {
    SplitFromTrain { fraction: f64 },
    SeparateDates { dates: Vec<NaiveDate> },
}

/// A config checked against a store manifest. Together with the store it
/// fully determines the split and the fitted scalers.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub dataset_id: String,
    pub size_tier: SizeTier,
    pub train_dates: Vec<NaiveDate>,
    /// Normalized to sum 1, aligned with `train_dates`.
    pub train_weights: Option<Vec<f64>>,
    pub test_dates: Vec<NaiveDate>,
    pub validation: ValidationPlan,
    pub app_selection: AppSelection,
    pub scaling: ScalingConfig,
    pub seed: u64,
    pub strict_time_order: bool,
    pub train_size: Option<u64>,
    pub val_size: Option<u64>,
    pub test_size: Option<u64>,
    pub warnings: Vec<String>,
}

impl ValidatedConfig {
    pub fn val_dates(&self) -> &[NaiveDate] {
        match &self.validation {
            ValidationPlan::SeparateDates { dates } => dates,
            ValidationPlan::SplitFromTrain { .. } => &[],
        }
    }

    pub fn fingerprint(&self, scope: Scope) -> String {
        fingerprint(self, scope)
    }
}

fn expand(
    field: &'static str,
    spec: &PeriodSpec,
    manifest: &StoreManifest,
    warnings: &mut Vec<String>,
) -> Result<PeriodExpansion, ConfigError> {
    let e = spec.expand(manifest).map_err(|source| ConfigError::Period { field, source })?;
    if !e.missing.is_empty() {
        warnings.push(format!(
            "{field}: dropped {} date(s) absent from the store: {}",
            e.missing.len(),
            e.missing.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok(e)
}

/// Aligns weights with the expanded train dates. Weights may be given either
/// for every nominal date of the period (weights of absent dates are then
/// dropped) or for the dates present in the store.
fn align_weights(raw: &[f64], train: &PeriodExpansion) -> Result<Vec<f64>, ConfigError> {
    if let Some(w) = raw.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(ConfigError::invalid("train_date_weights", format!("weight {w} is negative or not finite")));
    }
    let aligned: Vec<f64> = if raw.len() == train.dates.len() {
        raw.to_vec()
    } else if raw.len() == train.nominal.len() {
        train
            .nominal
            .iter()
            .zip(raw)
            .filter(|(d, _)| train.dates.binary_search(d).is_ok())
            .map(|(_, &w)| w)
            .collect()
    } else {
        return Err(ConfigError::WeightLengthMismatch {
            expected: train.dates.len(),
            found: raw.len(),
        });
    };
    let sum: f64 = aligned.iter().sum();
    if !(sum > 0.0) {
        return Err(ConfigError::invalid("train_date_weights", "weights must have a positive sum"));
    }
    Ok(aligned.iter().map(|w| w / sum).collect())
}

/// Checks `config` against `manifest`, expanding periods and normalizing
/// weights. The input is not modified.
pub fn validate(config: &DatasetConfig, manifest: &StoreManifest) -> Result<ValidatedConfig, ConfigError> {
    if config.dataset_id != manifest.dataset_id {
        return Err(ConfigError::UnknownDataset {
            expected: manifest.dataset_id.clone(),
            found: config.dataset_id.clone(),
        });
    }
    let mut warnings = Vec::new();
    let train = expand("train_period", &config.train_period, manifest, &mut warnings)?;
    let test = expand("test_period", &config.test_period, manifest, &mut warnings)?;

    let validation = match config.val_approach {
        ValApproach::SplitFromTrain => {
            if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
                return Err(ConfigError::invalid(
                    "val_fraction",
                    format!("must lie in (0, 1), got {}", config.val_fraction),
                ));
            }
            ValidationPlan::SplitFromTrain {
                fraction: config.val_fraction,
            }
        }
        ValApproach::SeparateDates => {
            let spec = config.val_period.as_ref().ok_or(ConfigError::MissingValidationDates)?;
            let val = expand("val_period", spec, manifest, &mut warnings)?;
            let overlap: Vec<NaiveDate> = val
                .dates
                .iter()
                .filter(|d| train.dates.binary_search(d).is_ok())
                .copied()
                .collect();
            if !overlap.is_empty() {
                return Err(ConfigError::ValidationOverlap(overlap));
            }
            ValidationPlan::SeparateDates { dates: val.dates }
        }
    };

    if config.strict_time_order {
        let last_train = match &validation {
            ValidationPlan::SeparateDates { dates } => train.dates.iter().chain(dates).max(),
            ValidationPlan::SplitFromTrain { .. } => train.dates.iter().max(),
        }
        .copied()
        .expect("train period is non-empty");
        let first_test = test.dates[0];
        if last_train >= first_test {
            return Err(ConfigError::TimeOrderViolation { last_train, first_test });
        }
    }

    let train_weights = config
        .train_date_weights
        .as_deref()
        .map(|w| align_weights(w, &train))
        .transpose()?;

    config.app_selection.validate().map_err(|r| ConfigError::invalid("app_selection", r))?;
    config.scaling.validate().map_err(|(field, r)| ConfigError::invalid(field, r))?;
    for (field, cap) in [
        ("train_size", config.train_size),
        ("val_size", config.val_size),
        ("test_size", config.test_size),
    ] {
        if cap == Some(0) {
            return Err(ConfigError::invalid(field, "size caps must be positive"));
        }
    }
    if config.val_size.is_some() && config.val_approach == ValApproach::SplitFromTrain {
        warnings.push("val_size is ignored with split-from-train; val_fraction sets the validation size".into());
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ValidatedConfig {
        dataset_id: config.dataset_id.clone(),
        size_tier: config.size_tier,
        train_dates: train.dates,
        train_weights,
        test_dates: test.dates,
        validation,
        app_selection: config.app_selection.clone(),
        scaling: config.scaling.clone(),
        seed: config.seed,
        strict_time_order: config.strict_time_order,
        train_size: config.train_size,
        val_size: config.val_size,
        test_size: config.test_size,
        warnings,
    })
}
