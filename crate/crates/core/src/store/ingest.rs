use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use super::manifest::{DateEntry, StoreManifest, TierTargets, DEFAULT_L_PPI, SCHEMA_VERSION};
use super::{FlowRecord, Partition, Result, StoreError, MANIFEST_FILE, PARTITION_DIR};
use crate::util;

/// Fixed leading columns of the ingestion CSV; statistics follow.
pub const CSV_FIXED_COLUMNS: [&str; 5] = ["date", "label", "ppi_sizes", "ppi_ipt_ms", "ppi_dirs"];

/// Directories written beside a store that depend on its contents.
const DERIVED_DIRS: [&str; 2] = ["splits", "scalers"];

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub l_ppi: usize,
    /// Defaults to the full-scale published targets.
    pub tier_targets: Option<TierTargets>,
    pub overwrite: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            l_ppi: DEFAULT_L_PPI,
            tier_targets: None,
            overwrite: false,
        }
    }
}

/// Accumulates records and writes a store. Row ids are assigned in push
/// order.
#[derive(Debug)]
pub struct StoreBuilder {
    dataset_id: String,
    l_ppi: usize,
    stat_names: Vec<String>,
    tier_targets: Option<TierTargets>,
    next_id: u64,
    by_date: BTreeMap<NaiveDate, Vec<FlowRecord>>,
}

impl StoreBuilder {
    pub fn new(dataset_id: impl Into<String>, stat_names: Vec<String>, l_ppi: usize) -> Self {
        StoreBuilder {
            dataset_id: dataset_id.into(),
            l_ppi,
            stat_names,
            tier_targets: None,
            next_id: 0,
            by_date: BTreeMap::new(),
        }
    }

    pub fn tier_targets(mut self, targets: Option<TierTargets>) -> Self {
        self.tier_targets = targets;
        self
    }

    pub fn len(&self) -> u64 {
        self.next_id
    }

    pub fn is_empty(&self) -> bool {
        self.next_id == 0
    }

    /// Validates `record`, assigns the next row id and returns it. The
    /// incoming `row_id` is ignored.
    pub fn push(&mut self, mut record: FlowRecord) -> std::result::Result<u64, String> {
        record.check(self.l_ppi, self.stat_names.len())?;
        record.row_id = self.next_id;
        self.next_id += 1;
        self.by_date.entry(record.date).or_default().push(record);
        Ok(self.next_id - 1)
    }

    /// Writes partitions and the manifest under `out`.
    pub fn finish(self, out: &Path, overwrite: bool) -> Result<StoreManifest> {
        if self.next_id == 0 {
            return Err(StoreError::NoRows);
        }
        let manifest_path = out.join(MANIFEST_FILE);
        if manifest_path.exists() {
            if !overwrite {
                return Err(StoreError::AlreadyExists(out.to_path_buf()));
            }
            for dir in std::iter::once(PARTITION_DIR).chain(DERIVED_DIRS) {
                let p = out.join(dir);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(StoreError::io(&p))?;
                }
            }
        }
        let part_dir = out.join(PARTITION_DIR);
        fs::create_dir_all(&part_dir).map_err(StoreError::io(&part_dir))?;

        let tier_targets = self
            .tier_targets
            .unwrap_or_default();
        tier_targets.validate()?;

        let mut dates = Vec::with_capacity(self.by_date.len());
        let mut classes: BTreeMap<String, u64> = BTreeMap::new();
        for (date, records) in &self.by_date {
            let part = Partition::from_records(*date, self.l_ppi, self.stat_names.len(), records);
            let bytes = part.encode();
            let file = format!("{PARTITION_DIR}/{date}.col");
            util::write_atomic(&out.join(&file), &bytes).map_err(StoreError::io(out.join(&file)))?;

            let mut row_ranges: Vec<[u64; 2]> = Vec::new();
            let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
            for r in records {
                match row_ranges.last_mut() {
                    Some(last) if last[1] == r.row_id => last[1] += 1,
                    _ => row_ranges.push([r.row_id, r.row_id + 1]),
                }
                *per_class.entry(r.label.clone()).or_default() += 1;
            }
            for (k, v) in &per_class {
                *classes.entry(k.clone()).or_default() += v;
            }
            dates.push(DateEntry {
                date: *date,
                rows: records.len() as u64,
                file,
                checksum: util::sha256_hex(&bytes),
                row_ranges,
                classes: per_class,
            });
        }
        let manifest = StoreManifest {
            dataset_id: self.dataset_id,
            schema_version: SCHEMA_VERSION,
            l_ppi: self.l_ppi,
            stat_names: self.stat_names,
            tier_targets,
            dates,
            classes,
            total_rows: self.next_id,
        };
        manifest.validate()?;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        util::write_atomic(&manifest_path, &json).map_err(StoreError::io(&manifest_path))?;
        Ok(manifest)
    }
}

fn parse_seq<T: std::str::FromStr>(field: &str, name: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .enumerate()
        .map(|(i, tok)| {
            tok.trim()
                .parse::<T>()
                .map_err(|e| format!("{name}[{i}] = `{tok}`: {e}"))
        })
        .collect()
}

/// Ingests CSV rows (header required) into a new store at `out`.
pub fn ingest_csv<R: Read>(
    source: R,
    dataset_id: &str,
    out: &Path,
    opts: &IngestOptions,
) -> Result<StoreManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(CSV_FIXED_COLUMNS.len()).collect();
    if fixed != CSV_FIXED_COLUMNS {
        return Err(StoreError::Malformed {
            row: 0,
            line: 1,
            reason: format!(
                "header must start with `{}`, found `{}`",
                CSV_FIXED_COLUMNS.join(","),
                fixed.join(",")
            ),
        });
    }
    let stat_names: Vec<String> = header.iter().skip(CSV_FIXED_COLUMNS.len()).map(str::to_string).collect();
    let arity = header.len();
    let mut builder = StoreBuilder::new(dataset_id, stat_names, opts.l_ppi).tier_targets(opts.tier_targets);

    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        let line = rec.position().map(|p| p.line()).unwrap_or(row + 1);
        let fail = |reason: String| StoreError::Malformed { row, line, reason };
        if rec.len() != arity {
            return Err(fail(format!("expected {arity} fields, found {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
            .map_err(|e| fail(format!("date `{}`: {e}", &rec[0])))?;
        let record = FlowRecord {
            row_id: 0,
            date,
            label: rec[1].trim().to_string(),
            ppi_sizes: parse_seq(&rec[2], "ppi_sizes").map_err(fail)?,
            ppi_ipt: parse_seq(&rec[3], "ppi_ipt_ms").map_err(fail)?,
            ppi_dirs: parse_seq(&rec[4], "ppi_dirs").map_err(fail)?,
            flow_stats: rec
                .iter()
                .skip(CSV_FIXED_COLUMNS.len())
                .zip(&header.iter().skip(CSV_FIXED_COLUMNS.len()).collect::<Vec<_>>())
                .map(|(v, name)| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("{name} = `{v}`: {e}"))
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(fail)?,
        };
        builder.push(record).map_err(fail)?;
    }
    builder.finish(out, opts.overwrite)
}

pub fn ingest_path(input: &Path, dataset_id: &str, out: &Path, opts: &IngestOptions) -> Result<StoreManifest> {
    let file = fs::File::open(input).map_err(StoreError::io(input))?;
    ingest_csv(std::io::BufReader::new(file), dataset_id, out, opts)
}
