//! Per-date partition files.
//!
//! Layout (all integers little-endian, columns stored one after another):
//!
//! ```text
//! magic      8 bytes  "FBPART01"
//! n_rows     u32
//! l_ppi      u32
//! n_stats    u32
//! n_labels   u32
//! row_id     n_rows x u64
//! labels     n_labels x (u32 byte length, UTF-8 bytes)
//! label_idx  n_rows x u32           index into the label dictionary
//! valid_len  n_rows x u16
//! ppi_sizes  n_rows x l_ppi x u16   zero padded
//! ppi_ipt    n_rows x l_ppi x f64   zero padded, milliseconds
//! ppi_dirs   n_rows x l_ppi x i8    zero padded
//! stats      n_stats x n_rows x f64 one column per statistic
//! ```

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::FlowRecord;

const MAGIC: &[u8; 8] = b"FBPART01";

/// Decoded partition held in memory.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Partition {
    pub date: NaiveDate,
    pub l_ppi: usize,
    pub n_stats: usize,
    pub row_ids: Vec<u64>,
    pub labels: Vec<String>,
    pub label_idx: Vec<u32>,
    pub valid_len: Vec<u16>,
    pub sizes: Vec<u16>,
    pub ipt: Vec<f64>,
    pub dirs: Vec<i8>,
    pub stats: Vec<f64>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn label(&self, offset: usize) -> &str {
        &self.labels[self.label_idx[offset] as usize]
    }

    pub fn sizes_row(&self, offset: usize) -> &[u16] {
        &self.sizes[offset * self.l_ppi..(offset + 1) * self.l_ppi]
    }

    pub fn ipt_row(&self, offset: usize) -> &[f64] {
        &self.ipt[offset * self.l_ppi..(offset + 1) * self.l_ppi]
    }

    pub fn dirs_row(&self, offset: usize) -> &[i8] {
        &self.dirs[offset * self.l_ppi..(offset + 1) * self.l_ppi]
    }

    pub fn stat(&self, stat: usize, offset: usize) -> f64 {
        self.stats[stat * self.len() + offset]
    }

    pub fn record(&self, offset: usize) -> FlowRecord {
        let n = self.valid_len[offset] as usize;
        FlowRecord {
            row_id: self.row_ids[offset],
            date: self.date,
            label: self.label(offset).to_string(),
            ppi_sizes: self.sizes_row(offset)[..n].to_vec(),
            ppi_ipt: self.ipt_row(offset)[..n].to_vec(),
            ppi_dirs: self.dirs_row(offset)[..n].to_vec(),
            flow_stats: (0..self.n_stats).map(|s| self.stat(s, offset)).collect(),
        }
    }

    /// Builds a partition from records that already satisfy the record
    /// invariants, in ascending row-id order.
    pub fn from_records(date: NaiveDate, l_ppi: usize, n_stats: usize, records: &[FlowRecord]) -> Self {
        let n = records.len();
        let mut dict: BTreeMap<&str, u32> = BTreeMap::new();
        for r in records {
            dict.entry(r.label.as_str()).or_insert(0);
        }
        for (i, v) in dict.values_mut().enumerate() {
            *v = i as u32;
        }
        let mut p = Partition {
            date,
            l_ppi,
            n_stats,
            row_ids: Vec::with_capacity(n),
            labels: dict.keys().map(|s| s.to_string()).collect(),
            label_idx: Vec::with_capacity(n),
            valid_len: Vec::with_capacity(n),
            sizes: vec![0; n * l_ppi],
            ipt: vec![0.0; n * l_ppi],
            dirs: vec![0; n * l_ppi],
            stats: vec![0.0; n * n_stats],
        };
        for (i, r) in records.iter().enumerate() {
            p.row_ids.push(r.row_id);
            p.label_idx.push(dict[r.label.as_str()]);
            p.valid_len.push(r.ppi_sizes.len() as u16);
            let base = i * l_ppi;
            p.sizes[base..base + r.ppi_sizes.len()].copy_from_slice(&r.ppi_sizes);
            p.ipt[base..base + r.ppi_ipt.len()].copy_from_slice(&r.ppi_ipt);
            p.dirs[base..base + r.ppi_dirs.len()].copy_from_slice(&r.ppi_dirs);
            for (s, &v) in r.flow_stats.iter().enumerate() {
                p.stats[s * n + i] = v;
            }
        }
        p
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(32 + n * (8 + 4 + 2 + self.l_ppi * 11 + self.n_stats * 8));
        out.extend_from_slice(MAGIC);
        for v in [n, self.l_ppi, self.n_stats, self.labels.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        self.row_ids.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for label in &self.labels {
            out.extend_from_slice(&(label.len() as u32).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
        }
        self.label_idx.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.valid_len.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.sizes.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.ipt.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.dirs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.stats.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out
    }

    pub fn decode(date: NaiveDate, bytes: &[u8]) -> Result<Self, String> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let n = cur.u32()? as usize;
        let l_ppi = cur.u32()? as usize;
        let n_stats = cur.u32()? as usize;
        let n_labels = cur.u32()? as usize;
        let row_ids = cur.column(n, |b| u64::from_le_bytes(b.try_into().unwrap()))?;
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let len = cur.u32()? as usize;
            let raw = cur.take(len)?;
            labels.push(String::from_utf8(raw.to_vec()).map_err(|_| "label is not UTF-8".to_string())?);
        }
        let label_idx = cur.column(n, |b| u32::from_le_bytes(b.try_into().unwrap()))?;
        if label_idx.iter().any(|&i| i as usize >= n_labels) {
            return Err("label index out of range".into());
        }
        let valid_len = cur.column(n, |b| u16::from_le_bytes(b.try_into().unwrap()))?;
        if valid_len.iter().any(|&v| v as usize > l_ppi) {
            return Err("valid length exceeds l_ppi".into());
        }
        let cells = n.checked_mul(l_ppi).ok_or("partition too large")?;
        let sizes = cur.column(cells, |b| u16::from_le_bytes(b.try_into().unwrap()))?;
        let ipt = cur.column(cells, |b| f64::from_le_bytes(b.try_into().unwrap()))?;
        let dirs = cur.column(cells, |b| i8::from_le_bytes(b.try_into().unwrap()))?;
        let stats = cur.column(n * n_stats, |b| f64::from_le_bytes(b.try_into().unwrap()))?;
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
        }
        Ok(Partition {
            date,
            l_ppi,
            n_stats,
            row_ids,
            labels,
            label_idx,
            valid_len,
            sizes,
            ipt,
            dirs,
            stats,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn column<T>(&mut self, n: usize, f: impl Fn(&[u8]) -> T) -> Result<Vec<T>, String> {
        let width = std::mem::size_of::<T>();
        let raw = self.take(n.checked_mul(width).ok_or("column too large")?)?;
        Ok(raw.chunks_exact(width).map(f).collect())
    }
}
