//! Period strings: ISO week tokens, explicit dates and inclusive ranges.
//!
//! A period is a comma-separated list of items, each one of
//!
//! * `W-2022-44`: ISO-8601 week 44 of 2022, Monday through Sunday;
//! * `2022-11-01`: a single date;
//! * `2022-10-31..2022-11-06`: an inclusive date range.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, Weekday};

use crate::store::StoreManifest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeriodError {
    #[error("malformed period `{token}`: {reason}")]
    Parse { token: String, reason: String },
    #[error("period `{spec}` expands to no dates present in the store (expansion: {})", format_dates(.expansion))]
    Empty { spec: String, expansion: Vec<NaiveDate> },
}

fn format_dates(dates: &[NaiveDate]) -> String {
    if dates.is_empty() {
        return "none".into();
    }
    dates.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodItem {
    Week { year: i32, week: u32 },
    Date(NaiveDate),
    Range(NaiveDate, NaiveDate),
}

impl PeriodItem {
    fn dates(&self) -> Vec<NaiveDate> {
        match *self {
            PeriodItem::Week { year, week } => {
                let monday = NaiveDate::from_isoywd_opt(year, week, Weekday::Mon)
                    .expect("validated at parse time");
                (0..7).map(|i| monday + Duration::days(i)).collect()
            }
            PeriodItem::Date(d) => vec![d],
            PeriodItem::Range(a, b) => a.iter_days().take_while(|d| *d <= b).collect(),
        }
    }
}

impl fmt::Display for PeriodItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeriodItem::Week { year, week } => write!(f, "W-{year}-{week:02}"),
            PeriodItem::Date(d) => write!(f, "{d}"),
            PeriodItem::Range(a, b) => write!(f, "{a}..{b}"),
        }
    }
}

fn parse_date(token: &str) -> Result<NaiveDate, PeriodError> {
    NaiveDate::parse_from_str(token, "%Y-%m-%d").map_err(|e| PeriodError::Parse {
        token: token.to_string(),
        reason: e.to_string(),
    })
}

impl FromStr for PeriodItem {
    type Err = PeriodError;

    fn from_str(token: &str) -> Result<Self, Self::Err> {
        let token = token.trim();
        let fail = |reason: &str| PeriodError::Parse {
            token: token.to_string(),
            reason: reason.to_string(),
        };
        if let Some(rest) = token.strip_prefix("W-") {
            let (year, week) = rest.split_once('-').ok_or_else(|| fail("expected W-<year>-<week>"))?;
            let year: i32 = year.parse().map_err(|_| fail("bad year"))?;
            let week: u32 = week.parse().map_err(|_| fail("bad week number"))?;
            if NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).is_none() {
                return Err(fail("no such ISO week"));
            }
            return Ok(PeriodItem::Week { year, week });
        }
        if let Some((a, b)) = token.split_once("..") {
            let (a, b) = (parse_date(a.trim())?, parse_date(b.trim())?);
            if a > b {
                return Err(fail("range end precedes its start"));
            }
            return Ok(PeriodItem::Range(a, b));
        }
        if token.is_empty() {
            return Err(fail("empty period"));
        }
        parse_date(token).map(PeriodItem::Date)
    }
}

/// A parsed, not yet expanded period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSpec {
    items: Vec<PeriodItem>,
}

impl PeriodSpec {
    pub fn from_dates(dates: &[NaiveDate]) -> Self {
        PeriodSpec {
            items: dates.iter().copied().map(PeriodItem::Date).collect(),
        }
    }

    pub fn items(&self) -> &[PeriodItem] {
        &self.items
    }

    /// Every calendar date named by the period, ascending and deduplicated.
    pub fn nominal_dates(&self) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = self.items.iter().flat_map(PeriodItem::dates).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Intersects the nominal dates with the manifest.
    pub fn expand(&self, manifest: &StoreManifest) -> Result<PeriodExpansion, PeriodError> {
        let nominal = self.nominal_dates();
        let (dates, missing): (Vec<NaiveDate>, Vec<NaiveDate>) =
            nominal.iter().partition(|d| manifest.date_index(**d).is_some());
        if dates.is_empty() {
            return Err(PeriodError::Empty {
                spec: self.to_string(),
                expansion: nominal,
            });
        }
        if !missing.is_empty() {
            log::warn!(
                "period `{self}`: {} date(s) absent from the store were dropped: {}",
                missing.len(),
                format_dates(&missing)
            );
        }
        Ok(PeriodExpansion { nominal, dates, missing })
    }
}

impl fmt::Display for PeriodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{item}")?;
        }
        Ok(())
    }
}

impl FromStr for PeriodSpec {
    type Err = PeriodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items = s.split(',').map(str::parse).collect::<Result<Vec<_>, _>>()?;
        Ok(PeriodSpec { items })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodExpansion {
    /// All dates named by the period.
    pub nominal: Vec<NaiveDate>,
    /// Dates present in the store, ascending.
    pub dates: Vec<NaiveDate>,
    /// Named dates absent from the store.
    pub missing: Vec<NaiveDate>,
}

/// Parses `spec` and expands it against `manifest`.
pub fn parse_period(spec: &str, manifest: &StoreManifest) -> Result<PeriodExpansion, PeriodError> {
    spec.parse::<PeriodSpec>()?.expand(manifest)
}
