use std::path::{Path, PathBuf};

use super::{fit_scalers, FittedScalers, Result};
use crate::config::{Scope, ValidatedConfig};
use crate::split;
use crate::store::Store;
use crate::util;

pub const SCALER_DIR: &str = "scalers";

pub fn cache_path(store_root: &Path, fingerprint: &str) -> PathBuf {
    store_root.join(SCALER_DIR).join(format!("{fingerprint}.scalers.json"))
}

/// Cached scalers for `fingerprint`. Unreadable or corrupt entries count as
/// absent.
pub fn cache_get(store_root: &Path, fingerprint: &str) -> Option<FittedScalers> {
    let path = cache_path(store_root, fingerprint);
    let raw = std::fs::read(&path).ok()?;
    match serde_json::from_slice::<FittedScalers>(&raw) {
        Ok(s) if s.fingerprint == fingerprint => Some(s),
        Ok(_) => {
            log::warn!("ignoring scaler cache entry {} with a foreign fingerprint", path.display());
            None
        }
        Err(e) => {
            log::warn!("ignoring corrupt scaler cache entry {}: {e}", path.display());
            None
        }
    }
}

/// Stores `scalers` under their fingerprint. Failures are logged and
/// reported as `false`.
pub fn cache_put(store_root: &Path, scalers: &FittedScalers) -> bool {
    let path = cache_path(store_root, &scalers.fingerprint);
    let mut json = serde_json::to_vec_pretty(scalers).expect("scalers serialize");
    json.push(b'\n');
    let res = std::fs::create_dir_all(store_root.join(SCALER_DIR)).and_then(|_| util::write_atomic(&path, &json));
    if let Err(e) = &res {
        log::warn!("cannot write scaler cache {}: {e}; continuing uncached", path.display());
    }
    res.is_ok()
}

/// Returns the cached scalers for `cfg`, fitting and caching them on a miss.
/// The flag reports a cache hit.
pub fn fit_cached(cfg: &ValidatedConfig, store: &Store) -> Result<(FittedScalers, bool)> {
    let fp = cfg.fingerprint(Scope::Scalers);
    if let Some(s) = cache_get(store.root(), &fp) {
        return Ok((s, true));
    }
    let pool = split::train_pool(cfg, store)?;
    let rows: Vec<u64> = pool.rows.iter().map(|r| r.row).collect();
    let mut scalers = fit_scalers(store, &rows, &cfg.scaling, cfg.seed)?;
    scalers.fingerprint = fp;
    cache_put(store.root(), &scalers);
    Ok((scalers, false))
}
