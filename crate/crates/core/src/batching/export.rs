use std::io::Write;

use super::{BatchError, FlowBatch, Result};
use crate::store::CSV_FIXED_COLUMNS;

/// Columns appended after the flow statistics.
pub const EXPORT_EXTRA_COLUMNS: [&str; 2] = ["label_id", "row_id"];

fn join<T: ToString>(v: impl Iterator<Item = T>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes batches as CSV in the ingestion layout plus the label id and row
/// id. Sequences are written without padding.
pub fn export_csv<W: Write>(
    out: W,
    stat_names: &[String],
    batches: impl IntoIterator<Item = Result<FlowBatch>>,
) -> Result<u64> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| BatchError::Export(e.to_string());
    let header: Vec<&str> = CSV_FIXED_COLUMNS
        .iter()
        .copied()
        .chain(stat_names.iter().map(String::as_str))
        .chain(EXPORT_EXTRA_COLUMNS)
        .collect();
    w.write_record(&header).map_err(err)?;
    let mut n = 0u64;
    for batch in batches {
        let b = batch?;
        for i in 0..b.len() {
            let k = b.valid_len[i] as usize;
            let mut rec = vec![
                b.dates[i].to_string(),
                b.labels[i].clone(),
                join(b.psizes_row(i)[..k].iter()),
                join(b.ipt_row(i)[..k].iter()),
                join(b.dirs_row(i)[..k].iter()),
            ];
            rec.extend(b.fstats_row(i).iter().map(|x| x.to_string()));
            rec.push(b.label_ids[i].to_string());
            rec.push(b.row_ids[i].to_string());
            w.write_record(&rec).map_err(err)?;
            n += 1;
        }
    }
    w.flush().map_err(|e| BatchError::Export(e.to_string()))?;
    Ok(n)
}
