use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::StoreError;

pub const SCHEMA_VERSION: u32 = 1;

/// Default number of leading packets kept per flow.
pub const DEFAULT_L_PPI: usize = 30;

/// Flow statistics recorded when the ingestion schema does not name its own.
pub const DEFAULT_STAT_NAMES: [&str; 8] = [
    "duration_s",
    "packets_fwd",
    "packets_rev",
    "bytes_fwd",
    "bytes_rev",
    "mean_pkt_size",
    "stdev_pkt_size",
    "mean_ipt_ms",
];

/// Dataset size tier. `Orig` means no subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeTier {
    #[serde(rename = "XS")]
    Xs,
    S,
    M,
    L,
    #[serde(rename = "ORIG")]
    Orig,
}

impl SizeTier {
    pub const ALL: [SizeTier; 5] = [SizeTier::Xs, SizeTier::S, SizeTier::M, SizeTier::L, SizeTier::Orig];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeTier::Xs => "XS",
            SizeTier::S => "S",
            SizeTier::M => "M",
            SizeTier::L => "L",
            SizeTier::Orig => "ORIG",
        }
    }
}

impl fmt::Display for SizeTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "XS" => Ok(SizeTier::Xs),
            "S" => Ok(SizeTier::S),
            "M" => Ok(SizeTier::M),
            "L" => Ok(SizeTier::L),
            "ORIG" | "ORIGINAL" => Ok(SizeTier::Orig),
            other => Err(format!("unknown size tier `{other}` (expected XS, S, M, L or ORIG)")),
        }
    }
}

/// Absolute row targets for the four subsampled tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierTargets {
    pub xs: u64,
    pub s: u64,
    pub m: u64,
    pub l: u64,
}

impl Default for TierTargets {
    /// Full-scale targets of the public datasets.
    fn default() -> Self {
        TierTargets {
            xs: 10_000_000,
            s: 25_000_000,
            m: 50_000_000,
            l: 100_000_000,
        }
    }
}

impl TierTargets {
    /// Desk-scale targets derived from a store size: 10%, 25%, 50% and 75%.
    pub fn scaled_to(total_rows: u64) -> Self {
        let frac = |num: u64, den: u64| (total_rows as u128 * num as u128 / den as u128) as u64;
        TierTargets {
            xs: frac(1, 10),
            s: frac(1, 4),
            m: frac(1, 2),
            l: frac(3, 4),
        }
    }

    /// `None` for [`SizeTier::Orig`].
    pub fn target(&self, tier: SizeTier) -> Option<u64> {
        match tier {
            SizeTier::Xs => Some(self.xs),
            SizeTier::S => Some(self.s),
            SizeTier::M => Some(self.m),
            SizeTier::L => Some(self.l),
            SizeTier::Orig => None,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.xs < self.s && self.s < self.m && self.m < self.l {
            Ok(())
        } else {
            Err(StoreError::InvalidTierTargets(format!(
                "tier targets must be strictly increasing, got XS={} S={} M={} L={}",
                self.xs, self.s, self.m, self.l
            )))
        }
    }
}

impl FromStr for TierTargets {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u64> = s
            .split(',')
            .map(|p| p.trim().parse::<u64>().map_err(|e| format!("bad tier target `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [xs, s, m, l] => Ok(TierTargets { xs: *xs, s: *s, m: *m, l: *l }),
            _ => Err(format!("expected four comma-separated targets (XS,S,M,L), got {}", parts.len())),
        }
    }
}

/// One date partition as listed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateEntry {
    pub date: NaiveDate,
    pub rows: u64,
    /// Path of the partition file relative to the store root.
    pub file: String,
    /// Hex SHA-256 of the partition file.
    pub checksum: String,
    /// Half-open row-id ranges held by this partition, ascending.
    pub row_ranges: Vec<[u64; 2]>,
    pub classes: BTreeMap<String, u64>,
}

impl DateEntry {
    pub fn row_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.row_ranges.iter().flat_map(|&[a, b]| a..b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub dataset_id: String,
    pub schema_version: u32,
    pub l_ppi: usize,
    pub stat_names: Vec<String>,
    pub tier_targets: TierTargets,
    pub dates: Vec<DateEntry>,
    pub classes: BTreeMap<String, u64>,
    pub total_rows: u64,
}

impl StoreManifest {
    pub fn date_list(&self) -> Vec<NaiveDate> {
        self.dates.iter().map(|d| d.date).collect()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search_by(|e| e.date.cmp(&date)).ok()
    }

    pub fn entry(&self, date: NaiveDate) -> Option<&DateEntry> {
        self.date_index(date).map(|i| &self.dates[i])
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().map(|d| d.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().map(|d| d.date)
    }

    pub fn n_stats(&self) -> usize {
        self.stat_names.len()
    }

    /// Checks the manifest's internal consistency.
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |msg: String| Err(StoreError::CorruptManifest(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if self.l_ppi == 0 {
            return bad("l_ppi must be positive".into());
        }
        let mut sum = 0u64;
        let mut classes: BTreeMap<&str, u64> = BTreeMap::new();
        for (i, entry) in self.dates.iter().enumerate() {
            if i > 0 && self.dates[i - 1].date >= entry.date {
                return bad(format!("dates not strictly ascending at {}", entry.date));
            }
            if entry.checksum.is_empty() {
                return bad(format!("partition {} has no checksum", entry.file));
            }
            let ranged: u64 = entry.row_ranges.iter().map(|&[a, b]| b.saturating_sub(a)).sum();
            if ranged != entry.rows || entry.row_ranges.iter().any(|&[a, b]| a >= b) {
                return bad(format!("row ranges of {} do not cover {} rows", entry.date, entry.rows));
            }
            let per_class: u64 = entry.classes.values().sum();
            if per_class != entry.rows {
                return bad(format!("class counts of {} do not sum to {}", entry.date, entry.rows));
            }
            for (name, &n) in &entry.classes {
                *classes.entry(name.as_str()).or_default() += n;
            }
            sum += entry.rows;
        }
        if sum != self.total_rows {
            return bad(format!("per-date counts sum to {sum}, manifest says {}", self.total_rows));
        }
        let listed: BTreeMap<&str, u64> = self.classes.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        if listed != classes {
            return bad("class totals disagree with per-date class counts".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_parse_roundtrip() {
        for t in SizeTier::ALL {
            assert_eq!(t.as_str().parse::<SizeTier>().unwrap(), t);
        }
        assert_eq!("xs".parse::<SizeTier>().unwrap(), SizeTier::Xs);
        assert!("XL".parse::<SizeTier>().is_err());
    }

    #[test]
    fn default_targets_match_published_sizes() {
        let t = TierTargets::default();
        assert_eq!((t.xs, t.s, t.m, t.l), (10_000_000, 25_000_000, 50_000_000, 100_000_000));
        t.validate().unwrap();
        assert_eq!(t.target(SizeTier::Orig), None);
    }

    #[test]
    fn targets_must_increase() {
        let t: TierTargets = "10,10,20,30".parse().unwrap();
        assert!(t.validate().is_err());
        assert!("1,2,3".parse::<TierTargets>().is_err());
    }
}
