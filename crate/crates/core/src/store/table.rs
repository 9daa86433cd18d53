use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;

use super::{Result, Store, StoreError};

/// Selectable record fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Date,
    Label,
    PpiSizes,
    PpiIpt,
    PpiDirs,
    FlowStats,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Date,
        Field::Label,
        Field::PpiSizes,
        Field::PpiIpt,
        Field::PpiDirs,
        Field::FlowStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Date => "date",
            Field::Label => "label",
            Field::PpiSizes => "ppi_sizes",
            Field::PpiIpt => "ppi_ipt_ms",
            Field::PpiDirs => "ppi_dirs",
            Field::FlowStats => "flow_stats",
        }
    }

    fn is_sequence(self) -> bool {
        matches!(self, Field::PpiSizes | Field::PpiIpt | Field::PpiDirs)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "date" => Ok(Field::Date),
            "label" => Ok(Field::Label),
            "ppi_sizes" => Ok(Field::PpiSizes),
            "ppi_ipt_ms" | "ppi_ipt" => Ok(Field::PpiIpt),
            "ppi_dirs" => Ok(Field::PpiDirs),
            "flow_stats" => Ok(Field::FlowStats),
            other => Err(StoreError::UnknownField(other.to_string())),
        }
    }
}

/// Rows read from a store, ascending by row id. Sequences are zero padded to
/// `l_ppi` and stored row-major; `valid_len` is present whenever a sequence
/// field was requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowTable {
    pub l_ppi: usize,
    pub stat_names: Vec<String>,
    pub row_ids: Vec<u64>,
    pub dates: Option<Vec<NaiveDate>>,
    pub labels: Option<Vec<String>>,
    pub valid_len: Option<Vec<u16>>,
    pub ppi_sizes: Option<Vec<u16>>,
    pub ppi_ipt: Option<Vec<f64>>,
    pub ppi_dirs: Option<Vec<i8>>,
    /// Row-major `len x stat_names.len()`.
    pub flow_stats: Option<Vec<f64>>,
}

impl RowTable {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }
}

pub(super) fn read_rows(store: &Store, rows: &[u64], fields: &[Field]) -> Result<RowTable> {
    let mut ids = rows.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let located: Vec<(usize, usize)> = ids
        .iter()
        .map(|&r| store.locate(r).ok_or(StoreError::UnknownRow(r)))
        .collect::<Result<_>>()?;

    let m = store.manifest();
    let l = m.l_ppi;
    let f = m.n_stats();
    let n = ids.len();
    let want = |x: Field| fields.contains(&x);
    let mut t = RowTable {
        l_ppi: l,
        stat_names: m.stat_names.clone(),
        dates: want(Field::Date).then(|| Vec::with_capacity(n)),
        labels: want(Field::Label).then(|| Vec::with_capacity(n)),
        valid_len: fields.iter().any(|x| x.is_sequence()).then(|| Vec::with_capacity(n)),
        ppi_sizes: want(Field::PpiSizes).then(|| Vec::with_capacity(n * l)),
        ppi_ipt: want(Field::PpiIpt).then(|| Vec::with_capacity(n * l)),
        ppi_dirs: want(Field::PpiDirs).then(|| Vec::with_capacity(n * l)),
        flow_stats: want(Field::FlowStats).then(|| Vec::with_capacity(n * f)),
        row_ids: ids,
    };

    let mut loaded: Vec<Option<std::sync::Arc<super::Partition>>> = vec![None; m.dates.len()];
    for &(d, _) in &located {
        if loaded[d].is_none() {
            loaded[d] = Some(store.partition(d)?);
        }
    }
    for &(d, off) in &located {
        let p = loaded[d].as_ref().expect("partition loaded above");
        if let Some(v) = t.dates.as_mut() {
            v.push(p.date);
        }
        if let Some(v) = t.labels.as_mut() {
            v.push(p.label(off).to_string());
        }
        if let Some(v) = t.valid_len.as_mut() {
            v.push(p.valid_len[off]);
        }
        if let Some(v) = t.ppi_sizes.as_mut() {
            v.extend_from_slice(p.sizes_row(off));
        }
        if let Some(v) = t.ppi_ipt.as_mut() {
            v.extend_from_slice(p.ipt_row(off));
        }
        if let Some(v) = t.ppi_dirs.as_mut() {
            v.extend_from_slice(p.dirs_row(off));
        }
        if let Some(v) = t.flow_stats.as_mut() {
            v.extend((0..f).map(|s| p.stat(s, off)));
        }
    }
    Ok(t)
}
