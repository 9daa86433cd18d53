//! Stable hash priorities and integer apportionment.
//!
//! Every random choice in the engine (size tiers, train caps, validation
//! draws, scaler fit samples, batch shuffles) is derived from a 64-bit
//! priority computed from `(seed, stream, row_id)`. Selecting "the k rows
//! with the lowest priority" is then a pure function of its inputs, does not
//! depend on iteration order, and is reproducible from any language that
//! implements the same mixer.

/// Independent priority streams. Each purpose gets its own salt so that, for
/// the same seed, the tier subsample and the validation draw are not
/// correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Tier,
    Train,
    Validation,
    Test,
    ScalerFit,
    Shuffle,
}

impl Stream {
    const fn salt(self) -> u64 {
        match self {
            Stream::Tier => 0x7469_6572_0000_0001,
            Stream::Train => 0x7472_6169_6e00_0002,
            Stream::Validation => 0x7661_6c00_0000_0003,
            Stream::Test => 0x7465_7374_0000_0004,
            Stream::ScalerFit => 0x6669_7400_0000_0005,
            Stream::Shuffle => 0x7368_7566_0000_0006,
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Priority of `row_id` in `stream` for `seed`. Lower priorities are picked
/// first.
#[inline]
pub fn priority(seed: u64, stream: Stream, row_id: u64) -> u64 {
    let key = mix64(seed.wrapping_add(stream.salt()));
    mix64(key ^ row_id.wrapping_mul(GOLDEN_GAMMA).wrapping_add(GOLDEN_GAMMA))
}

/// Shuffle key for one epoch. Sorting rows by this key yields the epoch's
/// permutation.
#[inline]
pub fn shuffle_key(seed: u64, epoch: u64, row_id: u64) -> u64 {
    priority(seed ^ mix64(epoch.wrapping_add(GOLDEN_GAMMA)), Stream::Shuffle, row_id)
}

/// Returns the `k` lowest-priority ids of `rows`, sorted ascending by row id.
/// Ties on priority (practically impossible) fall back to the row id.
pub fn lowest_priority(rows: &[u64], k: usize, seed: u64, stream: Stream) -> Vec<u64> {
    if k >= rows.len() {
        let mut all = rows.to_vec();
        all.sort_unstable();
        return all;
    }
    let mut keyed: Vec<(u64, u64)> = rows
        .iter()
        .map(|&r| (priority(seed, stream, r), r))
        .collect();
    if k > 0 {
        keyed.select_nth_unstable(k - 1);
    }
    let mut picked: Vec<u64> = keyed[..k].iter().map(|&(_, r)| r).collect();
    picked.sort_unstable();
    picked
}

/// Orders `rows` by ascending priority.
pub fn priority_order(rows: &mut [u64], seed: u64, stream: Stream) {
    rows.sort_by_cached_key(|&r| (priority(seed, stream, r), r));
}

/// Largest-remainder apportionment of `total` proportional to integer
/// `counts`. Exact rational arithmetic; ties go to the earlier index.
/// Entries can exceed their count when `total` exceeds the sum; callers check
/// feasibility first.
pub fn largest_remainder_counts(total: u64, counts: &[u64]) -> Vec<u64> {
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    if sum == 0 {
        return vec![0; counts.len()];
    }
    let mut out = Vec::with_capacity(counts.len());
    let mut rems = Vec::with_capacity(counts.len());
    let mut assigned: u128 = 0;
    for (i, &c) in counts.iter().enumerate() {
        let num = total as u128 * c as u128;
        out.push((num / sum) as u64);
        assigned += num / sum;
        rems.push((num % sum, i));
    }
    let left = (total as u128 - assigned) as usize;
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left) {
        out[i] += 1;
    }
    out
}

/// Largest-remainder apportionment of `total` proportional to real weights.
/// Weights need not be normalized; ties go to the earlier index.
pub fn largest_remainder_weights(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let ideal = total as f64 * (w / sum);
        let base = ideal.floor().min(total as f64) as u64;
        out.push(base);
        assigned += base;
        rems.push((ideal - base as f64, i));
    }
    let left = total.saturating_sub(assigned) as usize;
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left) {
        out[i] += 1;
    }
    out
}

/// House-monotone apportionment that stays within quota (Balinski-Young
/// quota method).
///
/// Seats are handed out one at a time; seat `h` goes to the index maximising
/// `counts[i] / (a[i] + 1)` among those whose allocation would not exceed the
/// upper quota `ceil(h * counts[i] / sum)`. Ties go to the earlier index.
/// Every result lies in `{floor(q_i), ceil(q_i)}` for the exact quota `q_i`,
/// and growing `total` never shrinks any entry, which is what keeps size
/// tiers nested.
pub fn quota_method(total: u64, counts: &[u64]) -> Vec<u64> {
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    let mut alloc = vec![0u64; counts.len()];
    if sum == 0 {
        return alloc;
    }
    assert!(total as u128 <= sum, "apportionment exceeds available rows");
    for seat in 1..=total as u128 {
        let mut best: Option<usize> = None;
        for (i, &c) in counts.iter().enumerate() {
            let a = alloc[i] as u128;
            // upper quota: a + 1 <= ceil(seat * c / sum)  <=>  a * sum < seat * c
            if a * sum >= seat * c as u128 {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    let lhs = c as u128 * (alloc[j] as u128 + 1);
                    let rhs = counts[j] as u128 * (a + 1);
                    if lhs > rhs {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
        let i = best.expect("quota method always has an eligible index");
        alloc[i] += 1;
    }
    alloc
}
