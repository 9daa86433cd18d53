use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use flowbench::config::ConfigDocument;
use flowbench::split::SplitName;
use flowbench::synth::{DriftEvent, NovelArrival, SynthDocument};

#[derive(Parser, Debug)]
#[command(name = "flowbench", version, about = "Date-partitioned flow datasets with time-aware splits")]
pub struct Cli {
    /// Only report errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a store from a CSV file.
    Ingest(IngestArgs),
    /// Generate a synthetic store.
    Synth(SynthArgs),
    /// Print the manifest and registry metadata of a store.
    Info(InfoArgs),
    /// Materialize (or reuse) the split of a config.
    Split(SplitArgs),
    /// Fit scalers for a config, or reuse cached ones.
    FitScalers(FitArgs),
    /// Write split rows as CSV.
    Export(ExportArgs),
    /// Evaluate predictions on the test split.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RootArgs {
    /// Store directory.
    #[arg(long, env = "FLOWBENCH_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV file to read, `-` for stdin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dataset_id: String,
    /// Output store directory; defaults to the data root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub root: RootArgs,
    /// Packets kept per flow.
    #[arg(long, default_value_t = flowbench::store::DEFAULT_L_PPI)]
    pub l_ppi: usize,
    /// Absolute XS,S,M,L row targets.
    #[arg(long)]
    pub tier_targets: Option<String>,
    /// Replace an existing store.
    #[arg(long)]
    pub overwrite: bool,
}

fn parse_drift(s: &str) -> Result<DriftEvent, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [date, fraction, shift] = parts.as_slice() else {
        return Err(format!("expected DATE:FRACTION:SHIFT, got `{s}`"));
    };
    Ok(DriftEvent {
        date: date.parse().map_err(|e| format!("drift date: {e}"))?,
        fraction: fraction.parse().map_err(|e| format!("drift fraction: {e}"))?,
        size_shift: shift.parse().map_err(|e| format!("drift shift: {e}"))?,
    })
}

fn parse_novel(s: &str) -> Result<NovelArrival, String> {
    let (class, date) = s.split_once(':').ok_or_else(|| format!("expected CLASS:DATE, got `{s}`"))?;
    Ok(NovelArrival {
        class: class.to_string(),
        first_date: date.parse().map_err(|e| format!("arrival date: {e}"))?,
    })
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML spec, top level or under `[synth]`; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output store directory; defaults to the data root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub root: RootArgs,
    /// Replace an existing store.
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub dataset_id: Option<String>,
    /// Number of generated classes, named app00, app01, ...
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    /// Consecutive dates from the start date (default 14).
    #[arg(long)]
    pub n_dates: Option<usize>,
    #[arg(long)]
    pub rows_per_date: Option<u64>,
    /// Class i gets weight (i+1)^-exponent.
    #[arg(long)]
    pub popularity_exponent: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub l_ppi: Option<usize>,
    /// Absolute XS,S,M,L row targets.
    #[arg(long)]
    pub tier_targets: Option<String>,
    /// Drift event DATE:FRACTION:SHIFT; repeatable.
    #[arg(long, value_parser = parse_drift)]
    pub drift: Vec<DriftEvent>,
    /// Novel class arrival CLASS:DATE; repeatable.
    #[arg(long, value_parser = parse_novel)]
    pub novel: Vec<NovelArrival>,
}

impl SynthArgs {
    pub fn to_document(&self) -> SynthDocument {
        SynthDocument {
            dataset_id: self.dataset_id.clone(),
            n_classes: self.n_classes,
            start_date: self.start_date,
            n_dates: self.n_dates,
            dates: None,
            rows_per_date: self.rows_per_date,
            popularity_exponent: self.popularity_exponent,
            seed: self.seed,
            l_ppi: self.l_ppi,
            tier_targets: self.tier_targets.clone(),
            drift_events: (!self.drift.is_empty()).then(|| self.drift.clone()),
            novel_arrivals: (!self.novel.is_empty()).then(|| self.novel.clone()),
            classes: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[command(flatten)]
    pub root: RootArgs,
}

/// One flag per config key.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Store directory.
    #[arg(long, env = "FLOWBENCH_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset id; defaults to the store's.
    #[arg(long)]
    pub dataset_id: Option<String>,
    /// XS, S, M, L or ORIG.
    #[arg(long)]
    pub size_tier: Option<String>,
    /// Train period: W-YYYY-WW, dates or DATE..DATE, comma separated.
    #[arg(long)]
    pub train_period: Option<String>,
    /// Comma-separated weights, one per train date.
    #[arg(long, value_delimiter = ',')]
    pub train_date_weights: Option<Vec<f64>>,
    /// Test period.
    #[arg(long)]
    pub test_period: Option<String>,
    /// split-from-train or separate-dates.
    #[arg(long)]
    pub val_approach: Option<String>,
    /// Validation period for separate-dates.
    #[arg(long)]
    pub val_period: Option<String>,
    /// Validation fraction for split-from-train.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// all-known, top-x, explicit-unknown or fixed.
    #[arg(long)]
    pub app_selection: Option<String>,
    /// Number of known classes for top-x.
    #[arg(long)]
    pub top_x: Option<usize>,
    /// Comma-separated unknown classes.
    #[arg(long, value_delimiter = ',')]
    pub unknown_apps: Option<Vec<String>>,
    /// Comma-separated known classes (fixed).
    #[arg(long, value_delimiter = ',')]
    pub known_apps: Option<Vec<String>>,
    /// Fraction of train rows used to fit scalers.
    #[arg(long)]
    pub fit_fraction: Option<f64>,
    /// standard, robust, minmax or none.
    #[arg(long)]
    pub psizes_scaler: Option<String>,
    /// Upper clip for packet sizes.
    #[arg(long)]
    pub psizes_max_clip: Option<f64>,
    /// standard, robust, minmax or none.
    #[arg(long)]
    pub ipt_scaler: Option<String>,
    /// Lower clip for inter-packet times (ms).
    #[arg(long)]
    pub ipt_min_clip: Option<f64>,
    /// Upper clip for inter-packet times (ms).
    #[arg(long)]
    pub ipt_max_clip: Option<f64>,
    /// standard, robust, minmax or none.
    #[arg(long)]
    pub fstats_scaler: Option<String>,
    /// Clip each flow statistic at this quantile.
    #[arg(long)]
    pub fstats_quantile_clip_q: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Require train and validation dates to precede test dates.
    #[arg(long)]
    pub strict_time_order: Option<bool>,
    /// Cap on train rows.
    #[arg(long)]
    pub train_size: Option<u64>,
    /// Cap on validation rows (separate-dates).
    #[arg(long)]
    pub val_size: Option<u64>,
    /// Cap on test rows.
    #[arg(long)]
    pub test_size: Option<u64>,
}

impl ConfigArgs {
    pub fn to_document(&self) -> ConfigDocument {
        ConfigDocument {
            dataset_id: self.dataset_id.clone(),
            size_tier: self.size_tier.clone(),
            train_period: self.train_period.clone(),
            train_date_weights: self.train_date_weights.clone(),
            test_period: self.test_period.clone(),
            val_approach: self.val_approach.clone(),
            val_period: self.val_period.clone(),
            val_fraction: self.val_fraction,
            app_selection: self.app_selection.clone(),
            top_x: self.top_x,
            unknown_apps: self.unknown_apps.clone(),
            known_apps: self.known_apps.clone(),
            fit_fraction: self.fit_fraction,
            psizes_scaler: self.psizes_scaler.clone(),
            psizes_max_clip: self.psizes_max_clip,
            ipt_scaler: self.ipt_scaler.clone(),
            ipt_min_clip: self.ipt_min_clip,
            ipt_max_clip: self.ipt_max_clip,
            fstats_scaler: self.fstats_scaler.clone(),
            fstats_quantile_clip_q: self.fstats_quantile_clip_q,
            seed: self.seed,
            strict_time_order: self.strict_time_order,
            train_size: self.train_size,
            val_size: self.val_size,
            test_size: self.test_size,
        }
    }
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write the fitted scalers as JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Splits to write; all three by default.
    #[arg(long, value_delimiter = ',')]
    pub split: Vec<SplitName>,
    /// Directory receiving `<split>.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Apply the fitted scalers.
    #[arg(long)]
    pub scaled: bool,
    #[arg(long, default_value_t = 65536)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// CSV with row_id,predicted_label_id[,ood_score].
    #[arg(long)]
    pub predictions: PathBuf,
    /// FPR targets for the unknown-class TPR; comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub fpr: Vec<f64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the per-date series as CSV.
    #[arg(long)]
    pub series_csv: Option<PathBuf>,
}
