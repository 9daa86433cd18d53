use crate::sample::{lowest_priority, quota_method, Stream};

use super::StoreManifest;

/// Picks `target` rows spread over the manifest dates in proportion to their
/// sizes. Only the manifest is consulted, so the result is a pure function of
/// `(manifest, target, seed)`.
///
/// `target` must not exceed the manifest's total row count.
pub fn subset_by_date(manifest: &StoreManifest, target: u64, seed: u64) -> Vec<Vec<u64>> {
    if target >= manifest.total_rows {
        return manifest.dates.iter().map(|e| e.row_ids().collect()).collect();
    }
    let counts: Vec<u64> = manifest.dates.iter().map(|e| e.rows).collect();
    let quotas = quota_method(target, &counts);
    manifest
        .dates
        .iter()
        .zip(quotas)
        .map(|(entry, quota)| {
            let ids: Vec<u64> = entry.row_ids().collect();
            lowest_priority(&ids, quota as usize, seed, Stream::Tier)
        })
        .collect()
}
