use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SplitError;

/// How classes are partitioned into known and unknown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AppSelection {
    #[default]
    AllKnown,
    /// The `x` most frequent train classes are known.
    TopX(usize),
    /// Everything observed except the listed classes is known.
    ExplicitUnknown(BTreeSet<String>),
    Fixed {
        known: BTreeSet<String>,
        unknown: BTreeSet<String>,
    },
}

impl AppSelection {
    pub fn mode(&self) -> &'static str {
        match self {
            AppSelection::AllKnown => "all-known",
            AppSelection::TopX(_) => "top-x",
            AppSelection::ExplicitUnknown(_) => "explicit-unknown",
            AppSelection::Fixed { .. } => "fixed",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            AppSelection::TopX(0) => Err("top-x needs x >= 1".into()),
            AppSelection::Fixed { known, unknown } => {
                let both: Vec<&str> = known.intersection(unknown).map(String::as_str).collect();
                if both.is_empty() {
                    Ok(())
                } else {
                    Err(format!("classes listed as both known and unknown: {}", both.join(", ")))
                }
            }
            _ => Ok(()),
        }
    }

    /// Stable textual form used in fingerprints.
    pub fn canonical(&self) -> String {
        let list = |s: &BTreeSet<String>| serde_json::to_string(s).expect("strings serialize");
        match self {
            AppSelection::AllKnown => "all-known".into(),
            AppSelection::TopX(x) => format!("top-x:{x}"),
            AppSelection::ExplicitUnknown(u) => format!("explicit-unknown:{}", list(u)),
            AppSelection::Fixed { known, unknown } => {
                format!("fixed:known={};unknown={}", list(known), list(unknown))
            }
        }
    }
}

impl fmt::Display for AppSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Known classes with dense ids, plus the unknown set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    /// Sorted by name; a class's id is its position.
    known: Vec<String>,
    unknown: BTreeSet<String>,
}

impl ClassMap {
    pub fn new(known: impl IntoIterator<Item = String>, unknown: impl IntoIterator<Item = String>) -> Self {
        let known: BTreeSet<String> = known.into_iter().collect();
        let unknown = unknown.into_iter().filter(|c| !known.contains(c)).collect();
        ClassMap {
            known: known.into_iter().collect(),
            unknown,
        }
    }

    pub fn known(&self) -> &[String] {
        &self.known
    }

    pub fn unknown(&self) -> &BTreeSet<String> {
        &self.unknown
    }

    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    pub fn unknown_id(&self) -> u32 {
        self.known.len() as u32
    }

    pub fn id_of(&self, class: &str) -> Option<u32> {
        self.known
            .binary_search_by(|k| k.as_str().cmp(class))
            .ok()
            .map(|i| i as u32)
    }

    /// Id of `class`, or the unknown id for anything not known.
    pub fn label_id(&self, class: &str) -> u32 {
        self.id_of(class).unwrap_or_else(|| self.unknown_id())
    }

    pub fn is_known(&self, class: &str) -> bool {
        self.id_of(class).is_some()
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.known.get(id as usize).map(String::as_str)
    }

    /// Adds classes observed outside the train period. Under `AllKnown` they
    /// become known, otherwise unknown. Returns the classes added.
    pub(crate) fn cover(&mut self, observed: &BTreeSet<String>, sel: &AppSelection) -> Vec<String> {
        let extra: Vec<String> = observed
            .iter()
            .filter(|c| !self.is_known(c) && !self.unknown.contains(*c))
            .cloned()
            .collect();
        if matches!(sel, AppSelection::AllKnown) {
            self.known.extend(extra.iter().cloned());
            self.known.sort_unstable();
        } else {
            self.unknown.extend(extra.iter().cloned());
        }
        extra
    }
}

/// Partitions the classes of `class_counts` (train-period counts) according
/// to `sel`. Returns the map and any warnings.
pub fn select_apps(
    class_counts: &BTreeMap<String, u64>,
    sel: &AppSelection,
) -> Result<(ClassMap, Vec<String>), SplitError> {
    sel.validate().map_err(|reason| SplitError::InvalidSelection { reason })?;
    let observed = class_counts.keys().cloned();
    let mut warnings = Vec::new();
    let map = match sel {
        AppSelection::AllKnown => ClassMap::new(observed, []),
        AppSelection::TopX(x) => {
            if *x > class_counts.len() {
                return Err(SplitError::TopXTooLarge {
                    x: *x,
                    available: class_counts.len(),
                });
            }
            let mut ranked: Vec<(&String, u64)> = class_counts.iter().map(|(c, &n)| (c, n)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let known = ranked[..*x].iter().map(|(c, _)| (*c).clone());
            let unknown = ranked[*x..].iter().map(|(c, _)| (*c).clone());
            ClassMap::new(known, unknown)
        }
        AppSelection::ExplicitUnknown(listed) => {
            let unobserved: Vec<&str> = listed
                .iter()
                .filter(|c| !class_counts.contains_key(*c))
                .map(String::as_str)
                .collect();
            if !unobserved.is_empty() {
                warnings.push(format!(
                    "unknown_apps lists classes not observed in the train period: {}",
                    unobserved.join(", ")
                ));
            }
            ClassMap::new(
                observed.filter(|c| !listed.contains(c)),
                listed.iter().cloned(),
            )
        }
        AppSelection::Fixed { known, unknown } => {
            let unlisted: Vec<String> = class_counts
                .keys()
                .filter(|c| !known.contains(*c) && !unknown.contains(*c))
                .cloned()
                .collect();
            if !unlisted.is_empty() {
                warnings.push(format!(
                    "classes listed as neither known nor unknown are treated as unknown: {}",
                    unlisted.join(", ")
                ));
            }
            ClassMap::new(known.iter().cloned(), unknown.iter().cloned().chain(unlisted))
        }
    };
    Ok((map, warnings))
}
