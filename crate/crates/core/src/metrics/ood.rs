use super::{MetricsError, Result};

/// One operating point of the unknown-class detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodPoint {
    pub tpr: f64,
    /// Rows with `score >= threshold` are flagged. `None` flags nothing.
    pub threshold: Option<f64>,
    pub achieved_fpr: f64,
}

/// TPR on unknown rows at the smallest threshold whose FPR on known rows
/// stays within `fpr_target`.
///
/// Thresholds are drawn from the known scores, so tied scores are always
/// flagged together. When even the largest known score flags too many known
/// rows, the threshold moves just past it: the smallest score above every
/// known score, or none at all.
pub fn ood_tpr_at_fpr(known: &[f64], unknown: &[f64], fpr_target: f64) -> Result<OodPoint> {
    if !(0.0..1.0).contains(&fpr_target) {
        return Err(MetricsError::InvalidTarget(fpr_target));
    }
    if unknown.is_empty() {
        return Err(MetricsError::ClosedWorld);
    }
    if known.is_empty() {
        return Err(MetricsError::NoKnownRows);
    }
    let mut k = known.to_vec();
    let mut u = unknown.to_vec();
    k.sort_unstable_by(|a, b| b.total_cmp(a));
    u.sort_unstable_by(f64::total_cmp);
    let n_known = k.len() as f64;
    let at_least = |sorted_asc: &[f64], t: f64| sorted_asc.len() - sorted_asc.partition_point(|&s| s < t);

    // Walk distinct known scores downwards while the FPR stays admissible.
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < k.len() {
        let t = k[i];
        let mut j = i;
        while j < k.len() && k[j] == t {
            j += 1;
        }
        if j as f64 / n_known > fpr_target {
            break;
        }
        best = Some((t, j));
        i = j;
    }
    let (threshold, flagged_known) = match best {
        Some((t, n)) => (Some(t), n),
        None => {
            let max_known = k[0];
            let above = u.partition_point(|&s| s <= max_known);
            (u.get(above).copied(), 0)
        }
    };
    let tpr = match threshold {
        Some(t) => at_least(&u, t) as f64 / u.len() as f64,
        None => 0.0,
    };
    Ok(OodPoint {
        tpr,
        threshold,
        achieved_fpr: flagged_known as f64 / n_known,
    })
}
