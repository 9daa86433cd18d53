//! Compiled-in metadata of the public CESNET datasets. Used for display and
//! sanity checks only; stores are always built from local files.

use std::fmt;

use chrono::NaiveDate;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegistryEntry {
    pub dataset_id: &'static str,
    pub protocol: &'static str,
    pub class_count: u32,
    pub total_samples: u64,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
}

const fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    match NaiveDate::from_ymd_opt(y, m, d) {
        Some(d) => d,
        None => panic!("invalid registry date"),
    }
}

pub const REGISTRY: [RegistryEntry; 3] = [
    RegistryEntry {
        dataset_id: "CESNET-TLS22",
        protocol: "TLS",
        class_count: 191,
        total_samples: 141_000_000,
        period_start: date(2021, 10, 4),
        period_end: date(2021, 10, 17),
    },
    RegistryEntry {
        dataset_id: "CESNET-QUIC22",
        protocol: "QUIC",
        class_count: 102,
        total_samples: 153_000_000,
        period_start: date(2022, 10, 31),
        period_end: date(2022, 11, 27),
    },
    RegistryEntry {
        dataset_id: "CESNET-TLS-Year22",
        protocol: "TLS",
        class_count: 182,
        total_samples: 507_000_000,
        period_start: date(2022, 1, 1),
        period_end: date(2022, 12, 31),
    },
];

/// Case-insensitive lookup.
pub fn lookup(dataset_id: &str) -> Option<&'static RegistryEntry> {
    REGISTRY.iter().find(|e| e.dataset_id.eq_ignore_ascii_case(dataset_id))
}

fn human_count(n: u64) -> String {
    if n >= 1_000_000 && n % 1_000_000 == 0 {
        format!("{}M", n / 1_000_000)
    } else {
        n.to_string()
    }
}

impl RegistryEntry {
    pub fn collection_days(&self) -> i64 {
        (self.period_end - self.period_start).num_days() + 1
    }
}

impl fmt::Display for RegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}): {} classes, {} samples, collected {} to {}",
            self.dataset_id,
            self.protocol,
            self.class_count,
            human_count(self.total_samples),
            self.period_start,
            self.period_end
        )
    }
}
