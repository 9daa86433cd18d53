use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::{ValidatedConfig, ValidationPlan};
use crate::util;

const FORMAT_VERSION: &str = "1";

/// Which consumer a fingerprint keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Every field that shapes the train/val/test indices.
    Split,
    /// Only the fields that shape the fitted scalers, so configs that differ
    /// elsewhere (test period, validation setup) share one cache entry.
    Scalers,
}

impl Scope {
    fn as_str(self) -> &'static str {
        match self {
            Scope::Split => "split",
            Scope::Scalers => "scalers",
        }
    }
}

fn dates(ds: &[NaiveDate]) -> String {
    ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn reals(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn fields(cfg: &ValidatedConfig, scope: Scope) -> BTreeMap<&'static str, String> {
    let mut f = BTreeMap::new();
    f.insert("fingerprint_format", FORMAT_VERSION.to_string());
    f.insert("fingerprint_scope", scope.as_str().to_string());
    f.insert("dataset_id", cfg.dataset_id.clone());
    f.insert("size_tier", cfg.size_tier.to_string());
    f.insert("seed", cfg.seed.to_string());
    f.insert("train_dates", dates(&cfg.train_dates));
    f.insert("train_date_weights", cfg.train_weights.as_deref().map_or("none".into(), reals));
    f.insert("train_size", opt(cfg.train_size));
    f.insert("app_selection", cfg.app_selection.canonical());
    match scope {
        Scope::Split => {
            f.insert("test_dates", dates(&cfg.test_dates));
            f.insert("test_size", opt(cfg.test_size));
            f.insert("strict_time_order", cfg.strict_time_order.to_string());
            match &cfg.validation {
                ValidationPlan::SplitFromTrain { fraction } => {
                    f.insert("val_approach", "split-from-train".into());
                    f.insert("val_fraction", format!("{fraction:?}"));
                }
                ValidationPlan::SeparateDates { dates: ds } => {
                    f.insert("val_approach", "separate-dates".into());
                    f.insert("val_dates", dates(ds));
                    f.insert("val_size", opt(cfg.val_size));
                }
            }
        }
        Scope::Scalers => {
            for (k, v) in cfg.scaling.canonical_fields() {
                f.insert(k, v);
            }
        }
    }
    f
}

/// Canonical `key=value` lines, sorted by key. Values are JSON-quoted so no
/// value can forge a line break or separator.
pub fn canonical_text(cfg: &ValidatedConfig, scope: Scope) -> String {
    let mut out = String::new();
    for (k, v) in fields(cfg, scope) {
        out.push_str(k);
        out.push('=');
        out.push_str(&serde_json::to_string(&v).expect("strings serialize"));
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of [`canonical_text`].
pub fn fingerprint(cfg: &ValidatedConfig, scope: Scope) -> String {
    util::sha256_hex(canonical_text(cfg, scope).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::{ScalerKind, ScalingConfig};
    use crate::split::AppSelection;
    use crate::store::SizeTier;

    fn base() -> ValidatedConfig {
        let d = |s: &str| s.parse::<NaiveDate>().unwrap();
        ValidatedConfig {
            dataset_id: "x".into(),
            size_tier: SizeTier::S,
            train_dates: vec![d("2022-10-31"), d("2022-11-01")],
            train_weights: None,
            test_dates: vec![d("2022-11-07")],
            validation: ValidationPlan::SplitFromTrain { fraction: 0.2 },
            app_selection: AppSelection::AllKnown,
            scaling: ScalingConfig::default(),
            seed: 1,
            strict_time_order: true,
            train_size: None,
            val_size: None,
            test_size: None,
            warnings: vec![],
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(fingerprint(&base(), Scope::Split), fingerprint(&base(), Scope::Split));
        assert_eq!(fingerprint(&base(), Scope::Split).len(), 64);
        assert_ne!(fingerprint(&base(), Scope::Split), fingerprint(&base(), Scope::Scalers));
    }

    #[test]
    fn test_period_only_affects_split_scope() {
        let mut other = base();
        other.test_dates = vec!["2022-11-08".parse().unwrap()];
        assert_eq!(fingerprint(&base(), Scope::Scalers), fingerprint(&other, Scope::Scalers));
        assert_ne!(fingerprint(&base(), Scope::Split), fingerprint(&other, Scope::Split));
    }

    #[test]
    fn seed_affects_both_scopes() {
        let mut other = base();
        other.seed = 2;
        for scope in [Scope::Split, Scope::Scalers] {
            assert_ne!(fingerprint(&base(), scope), fingerprint(&other, scope));
        }
    }

    #[test]
    fn scaler_fields_only_affect_scalers_scope() {
        let mut other = base();
        other.scaling.psizes_scaler = ScalerKind::Robust;
        assert_eq!(fingerprint(&base(), Scope::Split), fingerprint(&other, Scope::Split));
        assert_ne!(fingerprint(&base(), Scope::Scalers), fingerprint(&other, Scope::Scalers));
    }

    #[test]
    fn scalers_scope_covers_exactly_the_declared_fields() {
        let keys: Vec<String> = canonical_text(&base(), Scope::Scalers)
            .lines()
            .map(|l| l.split('=').next().unwrap().to_string())
            .collect();
        let mut expected = vec![
            "app_selection",
            "dataset_id",
            "fingerprint_format",
            "fingerprint_scope",
            "fit_fraction",
            "fstats_quantile_clip_q",
            "fstats_scaler",
            "ipt_max_clip",
            "ipt_min_clip",
            "ipt_scaler",
            "psizes_max_clip",
            "psizes_scaler",
            "seed",
            "size_tier",
            "train_date_weights",
            "train_dates",
            "train_size",
        ];
        expected.sort_unstable();
        assert_eq!(keys, expected);
    }

    #[test]
    fn validation_fields_do_not_leak_into_scalers_scope() {
        let mut other = base();
        other.validation = ValidationPlan::SplitFromTrain { fraction: 0.3 };
        other.strict_time_order = false;
        other.test_size = Some(5);
        assert_eq!(fingerprint(&base(), Scope::Scalers), fingerprint(&other, Scope::Scalers));
    }
}
