//! Per-date accuracy and unknown-class detection metrics over externally
//! produced predictions.

mod ood;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use ood::{ood_tpr_at_fpr, OodPoint};

use crate::split::SplitIndex;
use crate::store::{Field, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("prediction file line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("prediction for row {0}, which is not in the test split")]
    ForeignRow(u64),
    #[error("duplicate prediction for row {0}")]
    DuplicateRow(u64),
    #[error("{missing} test rows have no prediction")]
    MissingPredictions { missing: usize },
    #[error("closed-world split; OOD metric undefined")]
    ClosedWorld,
    #[error("OOD metric needs known-class test rows")]
    NoKnownRows,
    #[error("{missing} test rows have no ood_score")]
    MissingScores { missing: usize },
    #[error("ood_score {score} of row {row} is not finite")]
    NonFiniteScore { row: u64, score: f64 },
    #[error("FPR target {0} outside [0, 1)")]
    InvalidTarget(f64),
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::Store(_) => "StoreError",
            MetricsError::Parse { .. } => "PredictionParse",
            MetricsError::ForeignRow(_) => "ForeignRow",
            MetricsError::DuplicateRow(_) => "DuplicateRow",
            MetricsError::MissingPredictions { .. } => "MissingPredictions",
            MetricsError::ClosedWorld => "ClosedWorld",
            MetricsError::NoKnownRows => "NoKnownRows",
            MetricsError::MissingScores { .. } => "MissingScores",
            MetricsError::NonFiniteScore { .. } => "NonFiniteScore",
            MetricsError::InvalidTarget(_) => "InvalidFprTarget",
        }
    }
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub row_id: u64,
    pub predicted_label_id: u32,
    /// Higher means more likely unknown.
    pub ood_score: Option<f64>,
}

/// Reads `row_id,predicted_label_id[,ood_score]` with a header line.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| MetricsError::Parse {
            line,
            reason: e.to_string(),
        })?;
        let fail = |reason: String| MetricsError::Parse { line, reason };
        if rec.len() < 2 || rec.len() > 3 {
            return Err(fail(format!("expected 2 or 3 fields, found {}", rec.len())));
        }
        let row_id = rec[0].parse().map_err(|e| fail(format!("row_id: {e}")))?;
        let predicted_label_id = rec[1].parse().map_err(|e| fail(format!("predicted_label_id: {e}")))?;
        let ood_score = match rec.get(2) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|e| fail(format!("ood_score: {e}")))?),
        };
        out.push(Prediction {
            row_id,
            predicted_label_id,
            ood_score,
        });
    }
    Ok(out)
}

/// Writes predictions in the format [`read_predictions`] accepts.
pub fn write_predictions<W: Write>(out: W, preds: &[Prediction]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_scores = preds.iter().any(|p| p.ood_score.is_some());
    if with_scores {
        w.write_record(["row_id", "predicted_label_id", "ood_score"])?;
    } else {
        w.write_record(["row_id", "predicted_label_id"])?;
    }
    for p in preds {
        let mut rec = vec![p.row_id.to_string(), p.predicted_label_id.to_string()];
        if with_scores {
            rec.push(p.ood_score.map(|s| format!("{s:?}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()
}

/// A prediction joined with the ground truth of its test row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub row_id: u64,
    pub date: NaiveDate,
    pub truth: u32,
    pub predicted: u32,
    pub ood_score: Option<f64>,
}

/// Ground truth plus predictions for every test row, ascending by row id.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub unknown_id: u32,
    pub rows: Vec<Scored>,
}

impl EvalSet {
    pub fn known(&self) -> impl Iterator<Item = &Scored> {
        self.rows.iter().filter(move |r| r.truth != self.unknown_id)
    }

    pub fn unknown(&self) -> impl Iterator<Item = &Scored> {
        self.rows.iter().filter(move |r| r.truth == self.unknown_id)
    }
}

/// Joins predictions with the test split's labels and dates. Every test row
/// needs exactly one prediction.
pub fn join(store: &Store, index: &SplitIndex, preds: &[Prediction]) -> Result<EvalSet> {
    let t = store.read_rows(&index.test, &[Field::Date, Field::Label])?;
    let dates = t.dates.expect("requested");
    let labels = t.labels.expect("requested");
    let mut by_row: BTreeMap<u64, &Prediction> = BTreeMap::new();
    for p in preds {
        if index.test.binary_search(&p.row_id).is_err() {
            return Err(MetricsError::ForeignRow(p.row_id));
        }
        if by_row.insert(p.row_id, p).is_some() {
            return Err(MetricsError::DuplicateRow(p.row_id));
        }
    }
    if by_row.len() < t.row_ids.len() {
        return Err(MetricsError::MissingPredictions {
            missing: t.row_ids.len() - by_row.len(),
        });
    }
    let rows = t
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = by_row[r];
            Scored {
                row_id: *r,
                date: dates[i],
                truth: index.class_map.label_id(&labels[i]),
                predicted: p.predicted_label_id,
                ood_score: p.ood_score,
            }
        })
        .collect();
    Ok(EvalSet {
        unknown_id: index.class_map.unknown_id(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DateAccuracy {
    pub date: NaiveDate,
    /// Known-class rows.
    pub n: u64,
    pub correct: u64,
    /// `None` when the date has no known-class rows.
    pub accuracy: Option<f64>,
    /// Unknown-class rows, excluded from accuracy.
    pub unknown: u64,
}

/// Accuracy over known-class rows per date, dates ascending.
pub fn per_date_accuracy(set: &EvalSet) -> Vec<DateAccuracy> {
    let mut by_date: BTreeMap<NaiveDate, (u64, u64, u64)> = BTreeMap::new();
    for r in &set.rows {
        let e = by_date.entry(r.date).or_default();
        if r.truth == set.unknown_id {
            e.2 += 1;
        } else {
            e.0 += 1;
            e.1 += u64::from(r.predicted == r.truth);
        }
    }
    by_date
        .into_iter()
        .map(|(date, (n, correct, unknown))| DateAccuracy {
            date,
            n,
            correct,
            accuracy: (n > 0).then(|| correct as f64 / n as f64),
            unknown,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRecall {
    pub class: String,
    pub label_id: u32,
    pub n: u64,
    pub correct: u64,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodEntry {
    pub fpr_target: f64,
    pub tpr: f64,
    /// `None` when no threshold flags anything without exceeding the target.
    pub threshold: Option<f64>,
    pub achieved_fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub dataset_id: String,
    pub split_fingerprint: String,
    pub test_rows: u64,
    pub known_rows: u64,
    pub unknown_rows: u64,
    pub overall_accuracy: Option<f64>,
    pub per_date: Vec<DateAccuracy>,
    pub per_class_recall: Vec<ClassRecall>,
    pub ood: Vec<OodEntry>,
}

impl Report {
    /// Pretty JSON with a trailing newline; identical inputs give identical
    /// bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-date series as CSV, for plotting.
    pub fn write_series_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "n", "correct", "accuracy", "unknown"])?;
        for d in &self.per_date {
            w.write_record([
                d.date.to_string(),
                d.n.to_string(),
                d.correct.to_string(),
                d.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                d.unknown.to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Scores of the known and unknown rows, failing on missing or non-finite
/// ones.
pub fn split_scores(set: &EvalSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let missing = set.rows.iter().filter(|r| r.ood_score.is_none()).count();
    if missing > 0 {
        return Err(MetricsError::MissingScores { missing });
    }
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for r in &set.rows {
        let s = r.ood_score.expect("checked above");
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore { row: r.row_id, score: s });
        }
        if r.truth == set.unknown_id {
            unknown.push(s);
        } else {
            known.push(s);
        }
    }
    Ok((known, unknown))
}

/// Builds the evaluation report.
pub fn report(set: &EvalSet, index: &SplitIndex, fpr_targets: &[f64]) -> Result<Report> {
    let per_date = per_date_accuracy(set);
    let known_rows: u64 = per_date.iter().map(|d| d.n).sum();
    let correct: u64 = per_date.iter().map(|d| d.correct).sum();
    let unknown_rows: u64 = per_date.iter().map(|d| d.unknown).sum();

    let mut per_class: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for r in set.known() {
        let e = per_class.entry(r.truth).or_default();
        e.0 += 1;
        e.1 += u64::from(r.predicted == r.truth);
    }
    let per_class_recall = index
        .class_map
        .known()
        .iter()
        .enumerate()
        .map(|(id, class)| {
            let (n, c) = per_class.get(&(id as u32)).copied().unwrap_or_default();
            ClassRecall {
                class: class.clone(),
                label_id: id as u32,
                n,
                correct: c,
                recall: (n > 0).then(|| c as f64 / n as f64),
            }
        })
        .collect();

    let mut ood = Vec::new();
    if !fpr_targets.is_empty() {
        let (known, unknown) = split_scores(set)?;
        for &target in fpr_targets {
            let p = ood_tpr_at_fpr(&known, &unknown, target)?;
            ood.push(OodEntry {
                fpr_target: target,
                tpr: p.tpr,
                threshold: p.threshold,
                achieved_fpr: p.achieved_fpr,
            });
        }
    }
    Ok(Report {
        dataset_id: index.dataset_id.clone(),
        split_fingerprint: index.fingerprint.clone(),
        test_rows: set.rows.len() as u64,
        known_rows,
        unknown_rows,
        overall_accuracy: (known_rows > 0).then(|| correct as f64 / known_rows as f64),
        per_date,
        per_class_recall,
        ood,
    })
}
