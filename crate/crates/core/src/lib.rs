//! Date-partitioned flow-record storage with deterministic, time-aware and
//! open-world train/validation/test splits, feature scaling and evaluation.
//!
//! The usual flow is: open a [`store::Store`], build a
//! [`config::DatasetConfig`], [`config::validate`] it against the store's
//! manifest, then [`split::materialize`] the split, fit scalers with
//! [`scaling::fit_cached`] and read data through [`batching`].

pub mod batching;
pub mod config;
pub mod metrics;
pub mod sample;
pub mod scaling;
pub mod split;
pub mod store;
pub mod synth;
mod util;

/// Any engine error, with a stable kind name and the config field at fault
/// where there is one.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Split(#[from] split::SplitError),
    #[error(transparent)]
    Scaling(#[from] scaling::ScalingError),
    #[error(transparent)]
    Batch(#[from] batching::BatchError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

fn store_kind(e: &store::StoreError) -> &'static str {
    use store::StoreError::*;
    match e {
        Io { .. } => "Io",
        Malformed { .. } => "MalformedRow",
        Csv(_) => "CsvError",
        NoRows => "NoRows",
        AlreadyExists(_) => "AlreadyExists",
        NotFound(_) => "StoreNotFound",
        CorruptManifest(_) => "CorruptManifest",
        CorruptPartition { .. } => "CorruptPartition",
        TierTooLarge { .. } => "TierTooLarge",
        InvalidTierTargets(_) => "InvalidTierTargets",
        UnknownRow(_) => "UnknownRow",
        UnknownField(_) => "UnknownField",
        InvalidRecord(_) => "InvalidRecord",
    }
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Store(e)
            | Error::Split(split::SplitError::Store(e))
            | Error::Scaling(scaling::ScalingError::Store(e))
            | Error::Batch(batching::BatchError::Store(e))
            | Error::Metrics(metrics::MetricsError::Store(e))
            | Error::Synth(synth::SynthError::Store(e)) => store_kind(e),
            Error::Config(e) => e.kind(),
            Error::Split(e) => e.kind(),
            Error::Scaling(e) => e.kind(),
            Error::Batch(e) => e.kind(),
            Error::Metrics(e) => e.kind(),
            Error::Synth(e) => e.kind(),
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            Error::Store(store::StoreError::TierTooLarge { .. }) => Some("size_tier"),
            Error::Store(_) => None,
            Error::Config(e) => e.field(),
            Error::Split(e) => e.field(),
            Error::Scaling(e) => e.field(),
            Error::Batch(batching::BatchError::Scaling(e)) => e.field(),
            Error::Batch(_) | Error::Metrics(_) => None,
            Error::Synth(e) => e.field(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
