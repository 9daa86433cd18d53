//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use flowbench::batching::{iter_batches, read_batch, BatchOptions};
use flowbench::config::{self, ConfigDocument, ValidatedConfig};
use flowbench::metrics::{self, ood_tpr_at_fpr, Prediction};
use flowbench::scaling::{self, fit_scalers, quantile, FittedScalers, ScalerKind, ScalerParams, ScalingConfig};
use flowbench::split::{
    self, index_path, select_apps, sidecar_path, split_validation, AppSelection, ClassMap, LabeledRow, SplitIndex,
    SplitName,
};
use flowbench::store::{Field, SizeTier, Store, StoreBuilder, TierTargets};
use flowbench::synth::{self, DriftEvent, NovelArrival, SynthSpec};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 10, 31).unwrap()
}

fn synth_spec(id: &str, n_classes: usize, n_dates: usize, rows: u64, exponent: f64, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(id, n_classes, SynthSpec::consecutive_dates(start(), n_dates), rows, seed);
    spec.popularity_exponent = exponent;
    spec
}

fn build(spec: &SynthSpec, root: &Path) -> Result<Store, String> {
    ok(synth::generate(spec, root, true))?;
    ok(Store::open(root))
}

fn range(dates: &[NaiveDate], a: usize, b: usize) -> String {
    format!("{}..{}", dates[a], dates[b])
}

fn validated(doc: &ConfigDocument, store: &Store) -> Result<ValidatedConfig, flowbench::Error> {
    let cfg = doc.clone().into_config(&store.manifest().dataset_id)?;
    Ok(config::validate(&cfg, store.manifest())?)
}

/// A random config whose train and validation dates precede the test dates.
fn random_ordered_config(rng: &mut ChaCha8Rng, dates: &[NaiveDate], classes: &[String]) -> ConfigDocument {
    let n = dates.len();
    let train_a = rng.random_range(0..n - 3);
    let train_b = rng.random_range(train_a..n - 2);
    let mut doc = ConfigDocument {
        train_period: Some(range(dates, train_a, train_b)),
        seed: Some(rng.random()),
        size_tier: Some(["XS", "S", "M", "L", "ORIG"].choose(rng).unwrap().to_string()),
        strict_time_order: Some(true),
        ..Default::default()
    };
    let mut next = train_b + 1;
    if rng.random_bool(0.5) {
        doc.val_approach = Some("split-from-train".into());
        doc.val_fraction = Some(*[0.1, 0.2, 0.25, 0.33].choose(rng).unwrap());
    } else {
        let b = rng.random_range(next..n - 1);
        doc.val_approach = Some("separate-dates".into());
        doc.val_period = Some(range(dates, next, b));
        next = b + 1;
        if rng.random_bool(0.3) {
            doc.val_size = Some(rng.random_range(10..60));
        }
    }
    let test_b = rng.random_range(next..n);
    doc.test_period = Some(range(dates, next, test_b));
    if rng.random_bool(0.3) {
        doc.train_date_weights = Some((train_a..=train_b).map(|_| rng.random_range(0.1..3.0)).collect());
    }
    if rng.random_bool(0.3) {
        doc.train_size = Some(rng.random_range(20..200));
    }
    if rng.random_bool(0.3) {
        doc.test_size = Some(rng.random_range(20..300));
    }
    let mut shuffled = classes.to_vec();
    shuffled.shuffle(rng);
    match rng.random_range(0..4) {
        0 => doc.app_selection = Some("all-known".into()),
        1 => {
            doc.app_selection = Some("top-x".into());
            doc.top_x = Some(rng.random_range(2..classes.len()));
        }
        2 => {
            doc.app_selection = Some("explicit-unknown".into());
            let k = rng.random_range(1..=classes.len() / 2);
            doc.unknown_apps = Some(shuffled[..k].to_vec());
        }
        _ => {
            doc.app_selection = Some("fixed".into());
            let k = rng.random_range(2..classes.len());
            doc.known_apps = Some(shuffled[..k].to_vec());
            doc.unknown_apps = Some(shuffled[k..].to_vec());
        }
    }
    doc
}

struct Fixture {
    _dir: tempfile::TempDir,
    stores: Vec<(Store, Store)>,
    /// (store index, config, index) for the determinism configs.
    configs: Vec<(usize, ConfigDocument, SplitIndex)>,
}

fn read_bytes(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism(fx: &mut Option<Fixture>) -> Check {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut a = synth_spec("det-a", 10, 14, 700, 1.0, 7);
    a.novel_arrivals.push(NovelArrival {
        class: "app09".into(),
        first_date: start() + chrono::Days::new(9),
    });
    let mut b = synth_spec("det-b", 25, 14, 750, 1.3, 8);
    b.drift_events.push(DriftEvent {
        date: start() + chrono::Days::new(7),
        fraction: 0.3,
        size_shift: 250.0,
    });
    let mut stores = Vec::new();
    for (i, spec) in [a, b].iter().enumerate() {
        let s1 = build(spec, &dir.path().join(format!("s{i}-1")))?;
        let s2 = build(spec, &dir.path().join(format!("s{i}-2")))?;
        ensure!(s1.manifest() == s2.manifest(), "store {i} manifests differ between generations");
        for e in &s1.manifest().dates {
            let p = |s: &Store| s.root().join(&e.file);
            ensure!(read_bytes(&p(&s1))? == read_bytes(&p(&s2))?, "partition {} differs", e.file);
        }
        stores.push((s1, s2));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut configs = Vec::new();
    let mut rejected = 0;
    let mut compared = 0usize;
    while configs.len() < 50 {
        let si = configs.len() % stores.len();
        let (s1, s2) = &stores[si];
        let classes: Vec<String> = s1.manifest().classes.keys().cloned().collect();
        let doc = random_ordered_config(&mut rng, &s1.manifest().date_list(), &classes);
        let first = validated(&doc, s1).and_then(|c| Ok(split::materialize(&c, s1)?));
        let second = validated(&doc, s2).and_then(|c| Ok(split::materialize(&c, s2)?));
        let (i1, i2) = match (first, second) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(x), Err(y)) => {
                ensure!(x.to_string() == y.to_string(), "errors differ: {x} / {y}");
                rejected += 1;
                continue;
            }
            (x, y) => return Err(format!("one materialization failed: {:?} / {:?}", x.err(), y.err())),
        };
        ok(i1.save(s1.root()))?;
        ok(i2.save(s2.root()))?;
        for path in [index_path, sidecar_path] {
            let (p1, p2) = (path(s1.root(), &i1.fingerprint), path(s2.root(), &i2.fingerprint));
            ensure!(read_bytes(&p1)? == read_bytes(&p2)?, "{} differs between runs", p1.display());
        }
        let opts = BatchOptions {
            batch_size: rng.random_range(1..500),
            shuffle: true,
            seed: rng.random(),
            epoch: rng.random_range(0..10),
        };
        for split in SplitName::ALL {
            let it1 = ok(iter_batches(s1, split, &i1, None, opts))?;
            let it2 = ok(iter_batches(s2, split, &i2, None, opts))?;
            ensure!(it1.order() == it2.order(), "{split} batch order differs");
            let mut sorted = it1.order().to_vec();
            sorted.sort_unstable();
            ensure!(sorted == i1.rows(split), "{split} order is not a permutation of the split");
            if split == SplitName::Val {
                let rows1: Vec<u64> = it1.map(|b| b.unwrap().row_ids).collect::<Vec<_>>().concat();
                let rows2: Vec<u64> = it2.map(|b| b.unwrap().row_ids).collect::<Vec<_>>().concat();
                ensure!(rows1 == rows2 && rows1 == sorted_order(&i1, split, opts), "batch contents differ");
                compared += rows1.len();
            }
        }
        configs.push((si, doc, i1));
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    *fx = Some(Fixture {
        _dir: dir,
        stores,
        configs,
    });
    Ok(format!(
        "50 configs identical across independent runs ({rejected} rejected draws, {compared} batch rows compared) in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn sorted_order(index: &SplitIndex, split: SplitName, opts: BatchOptions) -> Vec<u64> {
    flowbench::batching::epoch_order(index.rows(split), true, opts.seed, opts.epoch)
}

fn time_consistency() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = build(&synth_spec("time", 8, 14, 400, 1.0, 3), dir.path())?;
    let dates = store.manifest().date_list();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut accepted, mut violations, mut overlaps) = (0, 0, 0);
    for i in 0..100 {
        let pick = |rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0..dates.len());
            (a, rng.random_range(a..dates.len()))
        };
        let (ta, tb) = pick(&mut rng);
        let (sa, sb) = pick(&mut rng);
        let separate = rng.random_bool(0.5);
        let (va, vb) = pick(&mut rng);
        let doc = ConfigDocument {
            train_period: Some(range(&dates, ta, tb)),
            test_period: Some(range(&dates, sa, sb)),
            val_approach: Some(if separate { "separate-dates" } else { "split-from-train" }.into()),
            val_period: separate.then(|| range(&dates, va, vb)),
            strict_time_order: Some(true),
            seed: Some(i),
            ..Default::default()
        };
        let overlap = separate && va <= tb && ta <= vb;
        let last_train = if separate { tb.max(vb) } else { tb };
        let expected = if overlap {
            "ValidationOverlap"
        } else if last_train >= sa {
            "TimeOrderViolation"
        } else {
            "ok"
        };
        match validated(&doc, &store) {
            Err(e) => {
                ensure!(e.kind() == expected, "config {i}: got {} expected {expected}", e.kind());
                if expected == "TimeOrderViolation" {
                    violations += 1;
                } else {
                    overlaps += 1;
                }
            }
            Ok(cfg) => {
                ensure!(expected == "ok", "config {i} accepted, expected {expected}");
                let max_tv = cfg.train_dates.iter().chain(cfg.val_dates()).max().unwrap();
                ensure!(max_tv < &cfg.test_dates[0], "config {i}: validated dates out of order");
                let index = ok(split::materialize(&cfg, &store))?;
                let last = index.train.iter().chain(&index.val).filter_map(|&r| store.date_of(r)).max();
                let first = index.test.iter().filter_map(|&r| store.date_of(r)).min();
                if let (Some(l), Some(f)) = (last, first) {
                    ensure!(l < f, "config {i}: row dates {l} >= {f}");
                }
                accepted += 1;
            }
        }
    }
    ensure!(accepted > 0 && violations > 0, "degenerate draw: {accepted} accepted, {violations} violations");
    Ok(format!(
        "100 configs: {accepted} accepted and ordered, {violations} TimeOrderViolation, {overlaps} ValidationOverlap"
    ))
}

fn no_leak(fx: &Option<Fixture>) -> Check {
    let fx = fx.as_ref().ok_or("determinism fixture unavailable")?;
    let mut audited = 0usize;
    let mut unknown_test = 0u64;
    for (n, (si, doc, index)) in fx.configs.iter().enumerate() {
        let store = &fx.stores[*si].0;
        let cfg = ok(validated(doc, store))?;
        let train: HashSet<u64> = index.train.iter().copied().collect();
        let val: HashSet<u64> = index.val.iter().copied().collect();
        let test: HashSet<u64> = index.test.iter().copied().collect();
        ensure!(train.len() == index.train.len() && val.len() == index.val.len() && test.len() == index.test.len(), "config {n}: duplicate rows");
        ensure!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test), "config {n}: splits overlap");
        let known: Vec<&String> = index.class_map.known().iter().collect();
        let check = |rows: &[u64], allow_unknown: bool, dates: &[NaiveDate]| -> Result<u64, String> {
            let t = ok(store.read_rows(rows, &[Field::Date, Field::Label]))?;
            let mut unknown = 0;
            for (i, label) in t.labels.unwrap().iter().enumerate() {
                let d = t.dates.as_ref().unwrap()[i];
                ensure!(dates.contains(&d), "config {n}: row {} dated {d} outside its period", rows[i]);
                if !known.iter().any(|k| *k == label) {
                    ensure!(allow_unknown, "config {n}: unknown class {label} in train/val (row {})", rows[i]);
                    unknown += 1;
                }
            }
            Ok(unknown)
        };
        let val_dates: Vec<NaiveDate> = if cfg.val_dates().is_empty() {
            cfg.train_dates.clone()
        } else {
            cfg.val_dates().to_vec()
        };
        check(&index.train, false, &cfg.train_dates)?;
        check(&index.val, false, &val_dates)?;
        let u = check(&index.test, true, &cfg.test_dates)?;
        ensure!(u == index.test_unknown, "config {n}: test_unknown {} but counted {u}", index.test_unknown);
        unknown_test += u;
        audited += index.train.len() + index.val.len() + index.test.len();
    }
    Ok(format!(
        "{} configs, {audited} rows audited, {unknown_test} unknown-class test rows, none leaked",
        fx.configs.len()
    ))
}

fn stratification() -> Check {
    let mut worst = 0i64;
    let mut cases = 0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = build(&synth_spec("strat", 20, 10, 800, 1.6, 21), dir.path())?;
    let dates = store.manifest().date_list();
    for f in [0.1, 0.2, 0.33] {
        for seed in 0..3u64 {
            let doc = ConfigDocument {
                train_period: Some(range(&dates, 0, 6)),
                test_period: Some(range(&dates, 7, 9)),
                val_fraction: Some(f),
                seed: Some(seed),
                size_tier: Some(["ORIG", "M", "XS"][seed as usize].into()),
                ..Default::default()
            };
            let cfg = ok(validated(&doc, &store))?;
            let index = ok(split::materialize(&cfg, &store))?;
            let count = |rows: &[u64]| -> Result<BTreeMap<String, i64>, String> {
                let mut m = BTreeMap::new();
                for l in ok(store.read_rows(rows, &[Field::Label]))?.labels.unwrap() {
                    *m.entry(l).or_insert(0) += 1;
                }
                Ok(m)
            };
            let (tr, va) = (count(&index.train)?, count(&index.val)?);
            for (class, &t) in &tr {
                let v = va.get(class).copied().unwrap_or(0);
                let dev = (v - (f * (t + v) as f64).round() as i64).abs();
                worst = worst.max(dev);
                ensure!(dev <= 1, "f={f} seed={seed} class {class}: val {v} of {}", t + v);
                cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..300 {
        let k = rng.random_range(1..40);
        let names: Vec<String> = (0..k).map(|i| format!("c{i:02}")).collect();
        let map = ClassMap::new(names.clone(), []);
        let mut rows = Vec::new();
        let mut next = 0u64;
        let mut sizes = vec![0i64; k];
        for (c, size) in sizes.iter_mut().enumerate() {
            *size = match rng.random_range(0..4) {
                0 => 1,
                1 => rng.random_range(2..6),
                2 => rng.random_range(6..100),
                _ => rng.random_range(100..3000),
            };
            for _ in 0..*size {
                rows.push(LabeledRow {
                    row: next,
                    label: c as u32,
                });
                next += rng.random_range(1..4);
            }
        }
        rows.shuffle(&mut rng);
        let f = *[0.1, 0.2, 0.33].choose(&mut rng).unwrap();
        let out = split_validation(&rows, f, &map, rng.random());
        let mut per = vec![0i64; k];
        for r in &out.val {
            per[r.label as usize] += 1;
        }
        ensure!(out.train.len() + out.val.len() == rows.len(), "trial {trial}: rows lost");
        for c in 0..k {
            let dev = (per[c] - (f * sizes[c] as f64).round() as i64).abs();
            worst = worst.max(dev);
            ensure!(dev <= 1, "trial {trial} f={f}: class of {} got {} val rows", sizes[c], per[c]);
            cases += 1;
        }
    }
    Ok(format!("{cases} class/fraction cases, max |val_c - round(f*n_c)| = {worst}"))
}

fn top_x() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ties = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=50);
        let wide = rng.random_bool(0.5);
        let mut counts = BTreeMap::new();
        while counts.len() < n {
            let name: String = (0..rng.random_range(1..6)).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            let c = if wide { rng.random_range(1..1_000_000) } else { rng.random_range(1..6) };
            counts.insert(name, c);
        }
        let x = rng.random_range(1..=n);
        let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(k, &v)| (k, v)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if x < n && ranked[x - 1].1 == ranked[x].1 {
            ties += 1;
        }
        let expected: BTreeSet<String> = ranked[..x].iter().map(|(k, _)| (*k).clone()).collect();
        let rest: BTreeSet<String> = ranked[x..].iter().map(|(k, _)| (*k).clone()).collect();
        let (map, _) = ok(select_apps(&counts, &AppSelection::TopX(x)))?;
        let got: BTreeSet<String> = map.known().iter().cloned().collect();
        ensure!(got == expected, "trial {trial}: known set differs");
        ensure!(map.unknown() == &rest, "trial {trial}: unknown set differs");
        let too_many = select_apps(&counts, &AppSelection::TopX(n + 1));
        ensure!(too_many.is_err(), "trial {trial}: x > classes accepted");
    }
    Ok(format!("1000 count maps match the (count desc, name asc) prefix; {ties} with ties at the cut"))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn brute_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Brute-force (center, scale) for one feature.
fn brute_params(kind: ScalerKind, values: &[f64]) -> (f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let nz = |x: f64| if x == 0.0 { 1.0 } else { x };
    match kind {
        ScalerKind::Standard => {
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, nz(var.sqrt()))
        }
        ScalerKind::Robust => (
            brute_quantile(&s, 0.5),
            nz(brute_quantile(&s, 0.75) - brute_quantile(&s, 0.25)),
        ),
        ScalerKind::MinMax => (s[0], s[s.len() - 1]),
        ScalerKind::Identity => (0.0, 1.0),
    }
}

fn params_of(p: &ScalerParams, feature: usize) -> (f64, f64) {
    match p {
        ScalerParams::Standard { mean, std } => (mean[feature], std[feature]),
        ScalerParams::Robust { median, iqr } => (median[feature], iqr[feature]),
        ScalerParams::MinMax { min, max } => (min[feature], max[feature]),
        ScalerParams::Identity => (0.0, 1.0),
    }
}

fn check_invariants(kind: ScalerKind, scaled: &[f64], what: &str) -> Result<(), String> {
    let n = scaled.len() as f64;
    match kind {
        ScalerKind::Standard => {
            let mean = scaled.iter().sum::<f64>() / n;
            let var = scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            ensure!(mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-9, "{what}: mean {mean} var {var}");
        }
        ScalerKind::Robust => {
            let mut s = scaled.to_vec();
            s.sort_by(f64::total_cmp);
            let med = brute_quantile(&s, 0.5);
            ensure!(med.abs() <= 1e-9, "{what}: median {med}");
        }
        ScalerKind::MinMax => {
            let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ensure!(lo >= -1e-9 && hi <= 1.0 + 1e-9, "{what}: range [{lo}, {hi}]");
        }
        ScalerKind::Identity => {}
    }
    Ok(())
}

const KINDS: [ScalerKind; 3] = [ScalerKind::Standard, ScalerKind::Robust, ScalerKind::MinMax];

fn scaler_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut arrays = 0;
    for trial in 0..300 {
        let n = rng.random_range(1..=1000);
        let values: Vec<f64> = (0..n)
            .map(|_| match trial % 3 {
                0 => rng.random_range(1.0..1500.0),
                1 => rng.random_range(-3.0f64..7.0).exp(),
                _ => f64::from(rng.random_range(40u16..1500)),
            })
            .collect();
        for kind in KINDS {
            let fitted = ScalerParams::fit(kind, &mut [values.clone()]);
            let (a, b) = params_of(&fitted, 0);
            let (ea, eb) = brute_params(kind, &values);
            ensure!(rel_close(a, ea, 1e-12) && rel_close(b, eb, 1e-12), "trial {trial} {kind:?}: ({a}, {b}) vs ({ea}, {eb})");
            if n > 1 && eb != 1.0 || kind == ScalerKind::MinMax {
                let scaled: Vec<f64> = values.iter().map(|&x| fitted.apply(0, x)).collect();
                check_invariants(kind, &scaled, &format!("trial {trial} {kind:?}"))?;
            }
        }
        let q = rng.random_range(0.0..=1.0);
        let mut s = values.clone();
        s.sort_by(f64::total_cmp);
        let got = quantile(&mut values.clone(), q);
        ensure!(rel_close(got, brute_quantile(&s, q), 1e-12), "trial {trial}: quantile({q})");
        arrays += 1;
    }
    let constant = ScalerParams::fit(ScalerKind::Standard, &mut [vec![5.0; 10]]);
    ensure!(params_of(&constant, 0).1 == 1.0, "degenerate std not replaced by 1");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = build(&synth_spec("scale", 12, 4, 250, 1.0, 13), dir.path())?;
    let train: Vec<u64> = (0..store.total_rows()).collect();
    let t = ok(store.read_rows(&train, &[Field::PpiSizes, Field::PpiIpt, Field::FlowStats]))?;
    let (l, f) = (t.l_ppi, t.stat_names.len());
    let valid = t.valid_len.unwrap();
    let (sizes, ipt, stats) = (t.ppi_sizes.unwrap(), t.ppi_ipt.unwrap(), t.flow_stats.unwrap());
    let (size_clip, ipt_lo, ipt_hi, q) = (900.0, 0.5, 120.0, 0.95);
    let mut raw_sizes = Vec::new();
    let mut raw_ipt = Vec::new();
    for i in 0..train.len() {
        for j in 0..valid[i] as usize {
            raw_sizes.push(f64::from(sizes[i * l + j]).min(size_clip));
            raw_ipt.push(ipt[i * l + j].clamp(ipt_lo, ipt_hi));
        }
    }
    let mut columns = Vec::new();
    let mut thresholds = Vec::new();
    for s in 0..f {
        let mut col: Vec<f64> = (0..train.len()).map(|i| stats[i * f + s]).collect();
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let th = brute_quantile(&sorted, q);
        col.iter_mut().for_each(|x| *x = x.min(th));
        thresholds.push(th);
        columns.push(col);
    }
    let map = ClassMap::new(store.manifest().classes.keys().cloned(), []);
    let batch = ok(read_batch(&store, &train, &map, None))?;
    for kind in KINDS {
        let cfg = ScalingConfig {
            fit_fraction: 1.0,
            psizes_scaler: kind,
            psizes_max_clip: Some(size_clip),
            ipt_scaler: kind,
            ipt_min_clip: Some(ipt_lo),
            ipt_max_clip: Some(ipt_hi),
            fstats_scaler: kind,
            fstats_quantile_clip_q: Some(q),
        };
        let fitted = ok(fit_scalers(&store, &train, &cfg, 0))?;
        let cmp = |got: (f64, f64), want: (f64, f64), what: &str| -> Result<(), String> {
            ensure!(rel_close(got.0, want.0, 1e-12) && rel_close(got.1, want.1, 1e-12), "{kind:?} {what}: {got:?} vs {want:?}");
            Ok(())
        };
        cmp(params_of(&fitted.psizes.params, 0), brute_params(kind, &raw_sizes), "psizes")?;
        cmp(params_of(&fitted.ipt.params, 0), brute_params(kind, &raw_ipt), "ipt")?;
        for s in 0..f {
            let th = fitted.fstats.clip_max[s].ok_or("missing quantile clip")?;
            ensure!(rel_close(th, thresholds[s], 1e-12), "{} threshold {th} vs {}", t.stat_names[s], thresholds[s]);
            cmp(params_of(&fitted.fstats.params, s), brute_params(kind, &columns[s]), &t.stat_names[s])?;
        }
        let scaled = ok(fitted.transform(&batch))?;
        let mut ps = Vec::new();
        let mut it = Vec::new();
        for i in 0..scaled.len() {
            let k = scaled.valid_len[i] as usize;
            ps.extend_from_slice(&scaled.psizes_row(i)[..k]);
            it.extend_from_slice(&scaled.ipt_row(i)[..k]);
        }
        check_invariants(kind, &ps, &format!("{kind:?} psizes"))?;
        check_invariants(kind, &it, &format!("{kind:?} ipt"))?;
        for s in 0..f {
            if brute_params(kind, &columns[s]).1 == 1.0 && kind != ScalerKind::MinMax {
                continue;
            }
            let col: Vec<f64> = (0..scaled.len()).map(|i| scaled.fstats_row(i)[s]).collect();
            check_invariants(kind, &col, &format!("{kind:?} {}", t.stat_names[s]))?;
        }
    }
    Ok(format!(
        "{arrays} random arrays and a {}-row store fit match brute force to 1e-12; invariants hold to 1e-9",
        train.len()
    ))
}

/// Exhaustive sweep over every distinct score as a threshold. Known scores
/// define the FPR levels; when none is admissible the lowest admissible
/// score overall is used.
fn sweep(known: &[f64], unknown: &[f64], target: f64) -> (f64, Option<f64>, f64) {
    let all: BTreeSet<u64> = known.iter().chain(unknown).map(|x| x.to_bits()).collect();
    let known_set: HashSet<u64> = known.iter().map(|x| x.to_bits()).collect();
    let mut best_known: Option<f64> = None;
    let mut best_any: Option<f64> = None;
    for bits in all {
        let t = f64::from_bits(bits);
        let fp = known.iter().filter(|&&k| k >= t).count() as f64 / known.len() as f64;
        if fp <= target {
            if known_set.contains(&bits) && best_known.is_none_or(|b| t < b) {
                best_known = Some(t);
            }
            if best_any.is_none_or(|b| t < b) {
                best_any = Some(t);
            }
        }
    }
    let t = best_known.or(best_any);
    match t {
        None => (0.0, None, 0.0),
        Some(t) => (
            unknown.iter().filter(|&&u| u >= t).count() as f64 / unknown.len() as f64,
            Some(t),
            known.iter().filter(|&&k| k >= t).count() as f64 / known.len() as f64,
        ),
    }
}

fn ood_oracle() -> Check {
    let p = ok(ood_tpr_at_fpr(&[0.1, 0.2, 0.3, 0.9], &[0.8, 0.95], 0.25))?;
    ensure!(p.tpr == 0.5 && p.threshold == Some(0.9) && p.achieved_fpr == 0.25, "worked example gave {p:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let targets = [0.0, 0.0001, 0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.9, 0.9999];
    let mut points = 0;
    for set in 0..4 {
        let n = 10_000;
        let n_unknown = rng.random_range(500..5000);
        let coarse = set % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng, shift: f64| {
            let x: f64 = rng.random_range(0.0..1.0) + shift;
            if coarse {
                (x * 20.0).round() / 20.0
            } else {
                x
            }
        };
        let shift = [0.0, 0.3, 0.6, 1.5][set];
        let known: Vec<f64> = (0..n - n_unknown).map(|_| draw(&mut rng, 0.0)).collect();
        let unknown: Vec<f64> = (0..n_unknown).map(|_| draw(&mut rng, shift)).collect();
        for &target in &targets {
            let got = ok(ood_tpr_at_fpr(&known, &unknown, target))?;
            let (tpr, th, fpr) = sweep(&known, &unknown, target);
            ensure!(
                got.tpr == tpr && got.threshold == th && got.achieved_fpr == fpr,
                "set {set} target {target}: {got:?} vs sweep ({tpr}, {th:?}, {fpr})"
            );
            points += 1;
        }
    }
    Ok(format!("worked example reproduced; {points} sweeps over 10^4-row score sets match exactly"))
}

fn drift() -> Check {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = synth_spec("drift", 10, 14, 1000, 0.5, 77);
    spec.drift_events.push(DriftEvent {
        date: spec.dates[7],
        fraction: 0.3,
        size_shift: 400.0,
    });
    let store = build(&spec, dir.path())?;
    let dates = store.manifest().date_list();
    let doc = ConfigDocument {
        train_period: Some(range(&dates, 0, 6)),
        test_period: Some(range(&dates, 7, 13)),
        val_fraction: Some(0.2),
        ..Default::default()
    };
    let cfg = ok(validated(&doc, &store))?;
    let index = ok(split::materialize(&cfg, &store))?;
    let map = &index.class_map;
    let stat = |name: &str| store.manifest().stat_names.iter().position(|s| s == name).unwrap();
    let cols = [stat("mean_pkt_size"), stat("stdev_pkt_size"), stat("mean_ipt_ms"), stat("packets_fwd")];
    let features = |rows: &[u64]| -> Result<(Vec<[f64; 4]>, flowbench::batching::FlowBatch), String> {
        let b = ok(read_batch(&store, rows, map, None))?;
        let f = (0..b.len())
            .map(|i| {
                let s = b.fstats_row(i);
                [s[cols[0]], s[cols[1]], s[cols[2]].ln_1p(), s[cols[3]]]
            })
            .collect();
        Ok((f, b))
    };
    let (train_x, train_b) = features(&index.train)?;
    let mut mean = [0.0; 4];
    let mut sd = [0.0; 4];
    for j in 0..4 {
        mean[j] = train_x.iter().map(|x| x[j]).sum::<f64>() / train_x.len() as f64;
        sd[j] = (train_x.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / train_x.len() as f64).sqrt().max(1e-12);
    }
    let z = |x: &[f64; 4]| -> [f64; 4] { std::array::from_fn(|j| (x[j] - mean[j]) / sd[j]) };
    let k = map.n_known();
    let mut centroids = vec![[0.0; 4]; k];
    let mut counts = vec![0usize; k];
    for (x, &label) in train_x.iter().zip(&train_b.label_ids) {
        let zx = z(x);
        for j in 0..4 {
            centroids[label as usize][j] += zx[j];
        }
        counts[label as usize] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let predict = |x: &[f64; 4]| -> u32 {
        let zx = z(x);
        let d = |c: &[f64; 4]| (0..4).map(|j| (zx[j] - c[j]).powi(2)).sum::<f64>();
        (0..k).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap() as u32
    };

    let (val_x, val_b) = features(&index.val)?;
    let mut by_date: BTreeMap<NaiveDate, (u64, u64)> = BTreeMap::new();
    for (i, x) in val_x.iter().enumerate() {
        let e = by_date.entry(val_b.dates[i]).or_default();
        e.0 += 1;
        e.1 += u64::from(predict(x) == val_b.label_ids[i]);
    }
    ensure!(by_date.len() == 7, "held-out slice covers {} dates", by_date.len());
    let held_out = by_date.values().map(|&(n, c)| c as f64 / n as f64).sum::<f64>() / by_date.len() as f64;

    let (test_x, test_b) = features(&index.test)?;
    let preds: Vec<Prediction> = test_x
        .iter()
        .zip(&test_b.row_ids)
        .map(|(x, &row_id)| Prediction {
            row_id,
            predicted_label_id: predict(x),
            ood_score: None,
        })
        .collect();
    let set = ok(metrics::join(&store, &index, &preds))?;
    let per_date = metrics::per_date_accuracy(&set);
    ensure!(per_date.len() == 7, "test series covers {} dates", per_date.len());
    let drifted = per_date.iter().map(|d| d.accuracy.unwrap_or(0.0)).sum::<f64>() / per_date.len() as f64;
    let drop = held_out - drifted;
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    ensure!(drop >= 0.10, "accuracy {held_out:.3} on dates 1-7 vs {drifted:.3} on 8-14: drop {drop:.3} < 0.10");
    Ok(format!(
        "held-out accuracy {:.1}% vs {:.1}% after drift (drop {:.1}pp) in {:.1}s",
        held_out * 100.0,
        drifted * 100.0,
        drop * 100.0,
        elapsed.as_secs_f64()
    ))
}

fn scaler_cache() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("store");
    let store = build(&synth_spec("cache", 10, 14, 500, 1.0, 5), &root)?;
    let dates = store.manifest().date_list();
    let run = |test: &str, out: &PathBuf| -> Result<String, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_flowbench"))
            .env_remove("FLOWBENCH_DATA_ROOT")
            .args(["fit-scalers", "--data-root"])
            .arg(&root)
            .args(["--train-period", &range(&dates, 0, 6), "--test-period", test])
            .args(["--psizes-scaler", "standard", "--ipt-scaler", "robust", "--fstats-scaler", "minmax"])
            .args(["--fstats-quantile-clip-q", "0.99", "--psizes-max-clip", "1200", "--output"])
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "fit-scalers failed: {}", String::from_utf8_lossy(&o.stderr));
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    };
    let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let first = run(&range(&dates, 7, 13), &pa)?;
    let second = run(&range(&dates, 9, 12), &pb)?;
    ensure!(first.contains("cache miss"), "first run: {first}");
    ensure!(second.starts_with("scaler cache hit"), "second run did not hit: {second}");
    let (ja, jb) = (read_bytes(&pa)?, read_bytes(&pb)?);
    ensure!(ja == jb, "scaler documents differ");
    let a: FittedScalers = ok(serde_json::from_slice(&ja))?;
    let b: FittedScalers = ok(serde_json::from_slice(&jb))?;
    let bits = |s: &FittedScalers| serde_json::to_string(&(&s.psizes, &s.ipt, &s.fstats)).unwrap();
    ensure!(a == b && bits(&a) == bits(&b), "parameters differ");

    let doc = ConfigDocument {
        train_period: Some(range(&dates, 0, 6)),
        test_period: Some(range(&dates, 9, 12)),
        psizes_scaler: Some("standard".into()),
        ipt_scaler: Some("robust".into()),
        fstats_scaler: Some("minmax".into()),
        fstats_quantile_clip_q: Some(0.99),
        psizes_max_clip: Some(1200.0),
        ..Default::default()
    };
    let cfg = ok(validated(&doc, &store))?;
    let pool = ok(split::train_pool(&cfg, &store))?;
    let rows: Vec<u64> = pool.rows.iter().map(|r| r.row).collect();
    let refit = ok(fit_scalers(&store, &rows, &cfg.scaling, cfg.seed))?;
    ensure!(
        refit.psizes == b.psizes && refit.ipt == b.ipt && refit.fstats == b.fstats,
        "cached parameters differ from an in-process refit"
    );
    ensure!(
        scaling::cache_path(&root, &b.fingerprint).exists(),
        "cache entry missing"
    );
    Ok(format!("second config reused scalers {} bit-identically", &b.fingerprint[..12]))
}

fn size_tiers() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let uniform = build(&synth_spec("tiers-u", 12, 14, 800, 1.0, 3), &dir.path().join("u"))?;

    let spec = synth_spec("tiers-v", 15, 20, 6000, 1.2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stat_names: Vec<String> = flowbench::store::DEFAULT_STAT_NAMES.iter().map(|s| s.to_string()).collect();
    let mut builder = StoreBuilder::new("tiers-v", stat_names, spec.l_ppi);
    for &date in &spec.dates {
        let keep = rng.random_range(300..6000);
        for r in synth::generate_date(&spec, date).into_iter().take(keep) {
            builder.push(r)?;
        }
    }
    let total = builder.len();
    let builder = builder.tier_targets(Some(TierTargets::scaled_to(total)));
    ok(builder.finish(&dir.path().join("v"), true))?;
    let varied = ok(Store::open(dir.path().join("v")))?;

    let tiers = [SizeTier::Xs, SizeTier::S, SizeTier::M, SizeTier::L, SizeTier::Orig];
    let mut checked = 0;
    for store in [&uniform, &varied] {
        let m = store.manifest();
        for seed in [0u64, 1, 0xdead_beef] {
            let mut prev: Option<HashSet<u64>> = None;
            for tier in tiers {
                let by_date = ok(store.tier_rows_by_date(tier, seed))?;
                let rows: HashSet<u64> = by_date.iter().flatten().copied().collect();
                let target = m.tier_targets.target(tier).unwrap_or(m.total_rows);
                ensure!(rows.len() as u64 == target, "{} {tier}: {} rows, target {target}", m.dataset_id, rows.len());
                for (e, picked) in m.dates.iter().zip(&by_date) {
                    let exact = target as f64 * e.rows as f64 / m.total_rows as f64;
                    ensure!(
                        (picked.len() as f64 - exact).abs() <= 1.0,
                        "{} {tier} {}: {} rows, proportional share {exact:.2}",
                        m.dataset_id,
                        e.date,
                        picked.len()
                    );
                    let ids: HashSet<u64> = e.row_ids().collect();
                    ensure!(picked.iter().all(|r| ids.contains(r)), "{tier}: row outside its date");
                }
                if let Some(p) = &prev {
                    ensure!(p.is_subset(&rows), "{} seed {seed}: tier below {tier} is not nested", m.dataset_id);
                }
                let flat = ok(store.derive_size_tier(tier, seed))?;
                ensure!(flat.len() == rows.len() && flat.iter().all(|r| rows.contains(r)), "{tier}: flat and per-date disagree");
                prev = Some(rows);
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} tier draws nested and within 1 row of proportional per date ({} and {} rows)",
        uniform.total_rows(),
        varied.total_rows()
    ))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() {
    let mut fixture = None;
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(panic_message(p)));
        match &outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => println!("FAIL {name}: {e}"),
        }
        results.push((name, outcome));
    };
    run("determinism", &mut || determinism(&mut fixture));
    run("time-consistency", &mut time_consistency);
    run("no-leak-disjointness", &mut || no_leak(&fixture));
    run("stratification", &mut stratification);
    run("top-x-oracle", &mut top_x);
    run("scaler-oracles", &mut scaler_oracles);
    run("ood-oracle", &mut ood_oracle);
    run("drift-scenario", &mut drift);
    run("scaler-cache", &mut scaler_cache);
    run("size-tiers", &mut size_tiers);
    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

