mod args;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use flowbench::batching::{export_csv, iter_batches, BatchOptions};
use flowbench::config::{self, registry, ConfigDocument, Scope, ValidatedConfig};
use flowbench::metrics;
use flowbench::scaling::{cache_path, fit_cached};
use flowbench::split::{index_path, materialize_cached, SplitIndex, SplitName};
use flowbench::store::{ingest_csv, IngestOptions, Store, StoreManifest, TierTargets};
use flowbench::synth::{self, SynthDocument};

use args::{Cli, Command, ConfigArgs};

#[derive(Debug)]
enum CliError {
    Engine(flowbench::Error),
    Usage {
        kind: &'static str,
        field: Option<&'static str>,
        message: String,
    },
    Io { path: PathBuf, source: io::Error },
}

impl From<flowbench::Error> for CliError {
    fn from(e: flowbench::Error) -> Self {
        CliError::Engine(e)
    }
}

macro_rules! engine_from {
    ($($t:ty),*) => { $( impl From<$t> for CliError {
        fn from(e: $t) -> Self { CliError::Engine(e.into()) }
    } )* };
}
engine_from!(
    flowbench::store::StoreError,
    flowbench::config::ConfigError,
    flowbench::split::SplitError,
    flowbench::scaling::ScalingError,
    flowbench::batching::BatchError,
    flowbench::metrics::MetricsError,
    flowbench::synth::SynthError
);

impl CliError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn to_json(&self) -> String {
        let (kind, field, message) = match self {
            CliError::Engine(e) => (e.kind(), e.field(), e.to_string()),
            CliError::Usage { kind, field, message } => (*kind, *field, message.clone()),
            CliError::Io { path, source } => ("Io", None, format!("{}: {source}", path.display())),
        };
        serde_json::json!({ "error": kind, "field": field, "message": message }).to_string()
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data_root(explicit: Option<&PathBuf>, fallback: Option<&PathBuf>) -> Result<PathBuf> {
    explicit.or(fallback).cloned().ok_or_else(|| CliError::Usage {
        kind: "MissingDataRoot",
        field: None,
        message: "no store given: pass --data-root or set FLOWBENCH_DATA_ROOT".into(),
    })
}

fn load(args: &ConfigArgs) -> Result<(Store, ValidatedConfig)> {
    let store = Store::open(data_root(args.data_root.as_ref(), None)?)?;
    let mut doc = match &args.config {
        Some(path) => ConfigDocument::from_path(path)?,
        None => ConfigDocument::default(),
    };
    doc.overlay(&args.to_document());
    let cfg = doc.into_config(&store.manifest().dataset_id)?;
    let validated = config::validate(&cfg, store.manifest())?;
    Ok((store, validated))
}

fn split_for(store: &Store, cfg: &ValidatedConfig) -> Result<SplitIndex> {
    let (index, hit) = materialize_cached(cfg, store)?;
    if hit {
        log::info!("reusing cached split {}", index.fingerprint);
    }
    Ok(index)
}

fn parse_targets(raw: Option<&str>) -> Result<Option<TierTargets>> {
    raw.map(|t| {
        t.parse::<TierTargets>().map_err(|message| CliError::Usage {
            kind: "InvalidTierTargets",
            field: Some("tier_targets"),
            message,
        })
    })
    .transpose()
}

fn print_manifest(out: &mut impl Write, root: &Path, m: &StoreManifest) -> io::Result<()> {
    writeln!(out, "store: {}", root.display())?;
    writeln!(out, "dataset: {}", m.dataset_id)?;
    let span = match (m.first_date(), m.last_date()) {
        (Some(a), Some(b)) => format!("{a} to {b}"),
        _ => "none".into(),
    };
    writeln!(out, "rows: {}, dates: {} ({span}), classes: {}", m.total_rows, m.dates.len(), m.classes.len())?;
    writeln!(out, "packets per flow: {}, flow statistics: {}", m.l_ppi, m.stat_names.join(","))?;
    let t = m.tier_targets;
    writeln!(out, "tier targets: XS={} S={} M={} L={}", t.xs, t.s, t.m, t.l)
}

fn cmd_ingest(a: &args::IngestArgs) -> Result<()> {
    let out = data_root(a.out.as_ref(), a.root.data_root.as_ref())?;
    let opts = IngestOptions {
        l_ppi: a.l_ppi,
        tier_targets: parse_targets(a.tier_targets.as_deref())?,
        overwrite: a.overwrite,
    };
    let manifest = if a.input.as_os_str() == "-" {
        ingest_csv(io::stdin().lock(), &a.dataset_id, &out, &opts)?
    } else {
        let file = fs::File::open(&a.input).map_err(CliError::io(&a.input))?;
        ingest_csv(io::BufReader::new(file), &a.dataset_id, &out, &opts)?
    };
    let mut stdout = io::stdout().lock();
    print_manifest(&mut stdout, &out, &manifest).map_err(CliError::io(Path::new("<stdout>")))
}

fn cmd_synth(a: &args::SynthArgs) -> Result<()> {
    let out = data_root(a.out.as_ref(), a.root.data_root.as_ref())?;
    let mut doc = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            SynthDocument::from_toml_str(&text)?
        }
        None => SynthDocument::default(),
    };
    doc.overlay(a.to_document());
    let spec = doc.into_spec()?;
    let manifest = synth::generate(&spec, &out, a.overwrite)?;
    let mut stdout = io::stdout().lock();
    print_manifest(&mut stdout, &out, &manifest).map_err(CliError::io(Path::new("<stdout>")))
}

fn cmd_info(a: &args::InfoArgs) -> Result<()> {
    let root = data_root(a.root.data_root.as_ref(), None)?;
    let store = Store::open(&root)?;
    let mut stdout = io::stdout().lock();
    let stdout_err = CliError::io(Path::new("<stdout>"));
    let res = print_manifest(&mut stdout, &root, store.manifest()).and_then(|_| {
        if let Some(entry) = registry::lookup(&store.manifest().dataset_id) {
            writeln!(stdout, "published: {entry}")?;
        }
        Ok(())
    });
    res.map_err(stdout_err)
}

fn cmd_split(a: &args::SplitArgs) -> Result<()> {
    let (store, cfg) = load(&a.config)?;
    let (index, hit) = materialize_cached(&cfg, &store)?;
    let mut lines = Vec::new();
    if hit {
        lines.push(format!("reusing cached split {}", index.fingerprint));
    } else {
        lines.push(format!("materialized split {}", index.fingerprint));
    }
    lines.push(format!("index: {}", index_path(store.root(), &index.fingerprint).display()));
    lines.push(format!(
        "train: {} rows, val: {} rows, test: {} rows ({} unknown-class)",
        index.train.len(),
        index.val.len(),
        index.test.len(),
        index.test_unknown
    ));
    lines.push(format!(
        "known classes: {}, unknown classes: {}",
        index.class_map.n_known(),
        index.class_map.unknown().len()
    ));
    lines.push(format!("{:<12}{:>10}{:>10}{:>10}", "date", "train", "val", "test"));
    for (date, c) in &index.per_date_counts {
        lines.push(format!("{:<12}{:>10}{:>10}{:>10}", date.to_string(), c.train, c.val, c.test));
    }
    write_lines(&lines)
}

fn write_lines(lines: &[String]) -> Result<()> {
    let mut stdout = io::stdout().lock();
    for l in lines {
        writeln!(stdout, "{l}").map_err(CliError::io(Path::new("<stdout>")))?;
    }
    Ok(())
}

fn cmd_fit(a: &args::FitArgs) -> Result<()> {
    let (store, cfg) = load(&a.config)?;
    let (scalers, hit) = fit_cached(&cfg, &store)?;
    let fp = cfg.fingerprint(Scope::Scalers);
    let mut lines = vec![if hit {
        format!("scaler cache hit {fp}")
    } else {
        format!("fitted scalers {fp} (cache miss)")
    }];
    lines.push(format!("cache: {}", cache_path(store.root(), &fp).display()));
    lines.push(format!(
        "fit sample: {} of {} train rows",
        scalers.fit_sample_size, scalers.train_rows
    ));
    let c = &scalers.config;
    lines.push(format!(
        "psizes: {}, ipt: {}, fstats: {}",
        c.psizes_scaler.as_str(),
        c.ipt_scaler.as_str(),
        c.fstats_scaler.as_str()
    ));
    if let Some(path) = &a.output {
        let mut json = serde_json::to_string_pretty(&scalers).expect("scalers serialize");
        json.push('\n');
        fs::write(path, json).map_err(CliError::io(path))?;
        lines.push(format!("wrote {}", path.display()));
    }
    write_lines(&lines)
}

fn cmd_export(a: &args::ExportArgs) -> Result<()> {
    let (store, cfg) = load(&a.config)?;
    let index = split_for(&store, &cfg)?;
    let scalers = if a.scaled {
        Some(fit_cached(&cfg, &store)?.0)
    } else {
        None
    };
    fs::create_dir_all(&a.out_dir).map_err(CliError::io(&a.out_dir))?;
    let splits = if a.split.is_empty() {
        SplitName::ALL.to_vec()
    } else {
        a.split.clone()
    };
    let opts = BatchOptions {
        batch_size: a.batch_size,
        shuffle: false,
        seed: cfg.seed,
        epoch: 0,
    };
    let mut lines = Vec::new();
    for split in splits {
        let path = a.out_dir.join(format!("{split}.csv"));
        let file = fs::File::create(&path).map_err(CliError::io(&path))?;
        let batches = iter_batches(&store, split, &index, scalers.as_ref(), opts)?;
        let n = export_csv(BufWriter::new(file), &store.manifest().stat_names, batches)?;
        lines.push(format!("wrote {n} rows to {}", path.display()));
    }
    write_lines(&lines)
}

fn cmd_eval(a: &args::EvalArgs) -> Result<()> {
    let (store, cfg) = load(&a.config)?;
    let index = split_for(&store, &cfg)?;
    let file = fs::File::open(&a.predictions).map_err(CliError::io(&a.predictions))?;
    let preds = metrics::read_predictions(io::BufReader::new(file))?;
    let set = metrics::join(&store, &index, &preds)?;
    let report = metrics::report(&set, &index, &a.fpr)?;
    if let Some(path) = &a.series_csv {
        let file = fs::File::create(path).map_err(CliError::io(path))?;
        report.write_series_csv(BufWriter::new(file)).map_err(CliError::io(path))?;
    }
    match &a.report {
        Some(path) => {
            fs::write(path, report.to_json()).map_err(CliError::io(path))?;
            let acc = report
                .overall_accuracy
                .map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            write_lines(&[format!("accuracy {acc} on {} known rows; wrote {}", report.known_rows, path.display())])
        }
        None => io::stdout()
            .lock()
            .write_all(report.to_json().as_bytes())
            .map_err(CliError::io(Path::new("<stdout>"))),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Info(a) => cmd_info(a),
        Command::Split(a) => cmd_split(a),
        Command::FitScalers(a) => cmd_fit(a),
        Command::Export(a) => cmd_export(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
