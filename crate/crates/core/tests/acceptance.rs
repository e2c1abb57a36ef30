//! Acceptance criteria, one line of output each. Runs as a plain binary so the
//! verdicts are printed even when the test harness captures output.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use xferbench::ledger::RunLedger;
use xferbench::manifest::Manifest;
use xferbench::metrics::{metric_set, score, ConfusionMatrix};
use xferbench::plan::{enumerate_pairs, enumerate_sources, enumerate_targets, group_pairs, reference_universe, GroupKey, TransferPair};
use xferbench::report::{analyze, write_csvs, AnalyzeOptions};
use xferbench::scorer::{pretrain, EpochSet, Network, TrainConfig};
use xferbench::signals::{fourier_resample, Epoch};
use xferbench::stages::{StageLabel, NUM_STAGES};
use xferbench::study::{run_study, StudyConfig};
use xferbench::synthgen::{generate, split_subjects, ChannelId, Condition, DatasetDescriptor, GenParams};
use xferbench::transferscore::{
    approx_eigenvector, impact_report, normalize, pairwise_raw, power_eigenvector, relative_diff, EvalRecord, Matrix,
    Setting,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

// ---------------------------------------------------------------- 1

fn plan_counts() -> Check {
    let u = reference_universe();
    let sources = enumerate_sources(&u).map_err(|e| e.to_string())?;
    let targets = enumerate_targets(&u).map_err(|e| e.to_string())?;
    let pairs = enumerate_pairs(&u).map_err(|e| e.to_string())?;
    ensure(sources.len() == 23, || format!("{} sources", sources.len()))?;
    ensure(targets.len() == 9, || format!("{} targets", targets.len()))?;
    ensure(pairs.len() == 134, || format!("{} pairs", pairs.len()))?;
    let per_target: Vec<(ChannelId, usize)> = targets
        .iter()
        .map(|t| (t.id(), pairs.iter().filter(|p| p.target.id() == t.id()).count()))
        .collect();
    let with14: Vec<_> = per_target.iter().filter(|(_, n)| *n == 14).collect();
    ensure(with14.len() == 1 && with14[0].0 == ChannelId::new("Sleep-EDF-SC", "Fpz-Cz"), || {
        format!("targets with 14 sources: {with14:?}")
    })?;
    let groups = group_pairs(&pairs);
    let empty: Vec<_> = groups.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| *k).collect();
    ensure(empty == [GroupKey::new(false, true, true)], || format!("empty groups {empty:?}"))?;
    Ok("23 sources, 9 targets, 134 pairs, one empty group".into())
}

// ---------------------------------------------------------------- 2

fn ms(mf1: f64) -> xferbench::metrics::MetricSet {
    xferbench::metrics::MetricSet { acc: mf1, mf1, per_class_f1: [mf1; NUM_STAGES] }
}

fn rec(setting: Setting, source: Option<&ChannelId>, target: &ChannelId, repeat: u32, mf1: f64) -> EvalRecord {
    EvalRecord { setting, source: source.cloned(), target: target.clone(), repeat, seed: 0, metrics: ms(mf1) }
}

fn random_ledger(pairs: &[TransferPair], repeats: u32, rng: &mut ChaCha8Rng) -> Vec<EvalRecord> {
    let mut targets: Vec<ChannelId> = pairs.iter().map(|p| p.target.id()).collect();
    targets.dedup();
    let mut out = Vec::new();
    for r in 0..repeats {
        for t in &targets {
            out.push(rec(Setting::FS, None, t, r, rng.random_range(0.5..0.9)));
        }
        for p in pairs {
            let (s, t) = (p.source.id(), p.target.id());
            out.push(rec(Setting::DT, Some(&s), &t, r, rng.random_range(0.2..0.9)));
            out.push(rec(Setting::FT, Some(&s), &t, r, rng.random_range(0.4..0.9)));
        }
    }
    out
}

fn brute_force_r(ledger: &[EvalRecord], pairs: &[TransferPair]) -> BTreeMap<GroupKey, f64> {
    let avg = |setting: Setting, src: Option<&ChannelId>, tgt: &ChannelId| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in ledger {
            if r.setting == setting && r.target == *tgt && (src.is_none() || r.source.as_ref() == src) {
                sum += r.metrics.mf1;
                n += 1.0;
            }
        }
        sum / n
    };
    let mut acc: BTreeMap<GroupKey, (f64, f64)> = BTreeMap::new();
    for p in pairs {
        let fs = avg(Setting::FS, None, &p.target.id());
        let dt = avg(Setting::DT, Some(&p.source.id()), &p.target.id());
        let e = acc.entry(p.group()).or_default();
        e.0 += (fs / dt - 1.0) * 100.0;
        e.1 += 1.0;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n)).collect()
}

fn arithmetic() -> Check {
    let r = relative_diff(0.80, 0.64).map_err(|e| e.to_string())?;
    ensure((r - 25.0).abs() < 1e-12, || format!("relative_diff gave {r}"))?;

    let t = ChannelId::new("T", "C4");
    let (a, b) = (ChannelId::new("A", "C4"), ChannelId::new("B", "C4"));
    let ledger = vec![
        rec(Setting::FS, None, &t, 0, 0.80),
        rec(Setting::FT, Some(&a), &t, 0, 0.80),
        rec(Setting::FT, Some(&b), &t, 0, 0.78),
    ];
    let h = pairwise_raw(&ledger, &t, &[a, b]).map_err(|e| e.to_string())?;
    ensure((h[0][1] - 2.5).abs() < 1e-12 && (h[1][0] + 2.5).abs() < 1e-12, || format!("pairwise gave {h:?}"))?;

    let pairs = enumerate_pairs(&reference_universe()).map_err(|e| e.to_string())?;
    let groups = group_pairs(&pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let ledger = random_ledger(&pairs, 1 + trial % 3, &mut rng);
        let report = impact_report(&ledger, &groups).map_err(|e| e.to_string())?;
        let brute = brute_force_r(&ledger, &pairs);
        for row in &report.rows {
            match (row.r, brute.get(&row.group)) {
                (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                (None, None) => {}
                other => return Err(format!("group {} mismatch {other:?}", row.group)),
            }
        }
    }
    ensure(worst < 1e-9, || format!("impact deviates by {worst:e}"))?;
    Ok(format!("examples exact, 20 random impact fixtures within {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn random_antisymmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random_range(-25.0..25.0);
            m[i][j] = v;
            m[j][i] = -v;
        }
    }
    m
}

fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn principal_eigenvalue(m: &Matrix, v: &[f64]) -> f64 {
    let n = m.len();
    (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum::<f64>() / v[i]).sum::<f64>() / n as f64
}

/// Random consistency index by matrix order.
fn random_index(n: usize) -> f64 {
    [0.0, 0.0, 0.0, 0.58, 0.90, 1.12, 1.24, 1.32, 1.41, 1.45, 1.49][n]
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn eigen() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let unit = |v: &[f64]| (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;

    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let alpha = rng.random_range(0.0..3.0);
        let m = normalize(&random_antisymmetric(n, &mut rng), alpha).map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure(m[i][i] == 1.0, || format!("diagonal {}", m[i][i]))?;
            for j in 0..n {
                ensure(m[i][j] > 0.0 && (m[i][j] * m[j][i] - 1.0).abs() < 1e-9, || {
                    format!("not positive reciprocal at ({i},{j})")
                })?;
            }
        }
        let a = approx_eigenvector(&m).map_err(|e| e.to_string())?;
        let p = power_eigenvector(&m).map_err(|e| e.to_string())?;
        ensure(unit(&a) && unit(&p), || "eigenvector does not sum to 1".into())?;
    }

    let mut worst_consistent = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=10);
        let w = random_weights(n, &mut rng);
        let m: Matrix = (0..n).map(|i| (0..n).map(|j| w[i] / w[j]).collect()).collect();
        let a = approx_eigenvector(&m).map_err(|e| e.to_string())?;
        let p = power_eigenvector(&m).map_err(|e| e.to_string())?;
        ensure(unit(&a) && unit(&p), || "eigenvector does not sum to 1".into())?;
        worst_consistent = worst_consistent.max(linf(&a, &p));
    }
    ensure(worst_consistent < 1e-9, || format!("consistent matrices differ by {worst_consistent:e}"))?;

    let mut worst_near = 0.0f64;
    let mut tested = 0;
    while tested < 500 {
        let n = rng.random_range(3..=10);
        let w = random_weights(n, &mut rng);
        let mut m: Matrix = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let noise: f64 = rng.random_range(-0.25f64..0.25).exp();
                m[i][j] = w[i] / w[j] * noise;
                m[j][i] = 1.0 / m[i][j];
            }
        }
        let p = power_eigenvector(&m).map_err(|e| e.to_string())?;
        let ci = (principal_eigenvalue(&m, &p) - n as f64) / (n as f64 - 1.0);
        if ci / random_index(n) >= 0.1 {
            continue;
        }
        let a = approx_eigenvector(&m).map_err(|e| e.to_string())?;
        ensure(unit(&a) && unit(&p), || "eigenvector does not sum to 1".into())?;
        worst_near = worst_near.max(linf(&a, &p));
        tested += 1;
    }
    ensure(worst_near < 0.05, || format!("near-consistent matrices differ by {worst_near}"))?;
    Ok(format!(
        "1000 reciprocal maps ok; consistent L-inf {worst_consistent:.1e}; near-consistent L-inf {worst_near:.4}"
    ))
}

// ---------------------------------------------------------------- 4

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut cm = [[0u64; NUM_STAGES]; NUM_STAGES];
        for row in cm.iter_mut() {
            for c in row.iter_mut() {
                *c = if rng.random_bool(0.3) { 0 } else { rng.random_range(0..50) };
            }
        }
        cm[0][0] += 1;
        let total: u64 = cm.iter().flatten().sum();
        let diag: u64 = (0..NUM_STAGES).map(|k| cm[k][k]).sum();
        let mut f1 = [0.0; NUM_STAGES];
        for k in 0..NUM_STAGES {
            let tp = cm[k][k] as f64;
            let fn_: f64 = (0..NUM_STAGES).filter(|&j| j != k).map(|j| cm[k][j] as f64).sum();
            let fp: f64 = (0..NUM_STAGES).filter(|&i| i != k).map(|i| cm[i][k] as f64).sum();
            f1[k] = if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        }
        let acc = diag as f64 / total as f64;
        let mf1 = f1.iter().sum::<f64>() / NUM_STAGES as f64;
        let m = metric_set(&ConfusionMatrix(cm)).map_err(|e| e.to_string())?;
        worst = worst.max((m.acc - acc).abs()).max((m.mf1 - mf1).abs());
        worst = worst.max(linf(&m.per_class_f1, &f1));
    }
    ensure(worst < 1e-9, || format!("oracle deviation {worst:e}"))?;

    use StageLabel::*;
    let m = score(&[W, W, N2, N2, Rem], &[W, N2, N2, N2, Rem]).map_err(|e| e.to_string())?;
    ensure((m.mf1 - 0.49333).abs() < 1e-5, || format!("worked example mf1 {}", m.mf1))?;
    Ok(format!("1000 confusion matrices within {worst:.1e}; worked mf1 {:.5}", m.mf1))
}

// ---------------------------------------------------------------- 5

fn gradient_check(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let dims = [5, rng.random_range(2..8), rng.random_range(2..8), NUM_STAGES];
    let net = Network::random(&dims, 0.7, rng);
    let n = rng.random_range(1..10);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..NUM_STAGES)).collect();
    let (_, grad) = net.loss_and_gradient(&xs, &ys);
    let analytic: Vec<f64> = grad.parameters().copied().collect();
    let count = analytic.len();
    let step = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..count {
        let mut plus = net.clone();
        *plus.parameters_mut().nth(k).unwrap() += step;
        let mut minus = net.clone();
        *minus.parameters_mut().nth(k).unwrap() -= step;
        let numeric = (plus.loss(&xs, &ys) - minus.loss(&xs, &ys)) / (2.0 * step);
        let a = analytic[k];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-7 { (a - numeric).abs() / 1e-7 } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

fn small_cohort_sets() -> Result<(EpochSet, EpochSet), String> {
    let d = DatasetDescriptor {
        dataset_id: "ACC".into(),
        environment_id: "lab".into(),
        condition: Condition::Healthy,
        channel: "C4".into(),
        sampling_rate_hz: 100,
        epoch_seconds: 30,
    };
    let p = GenParams { n_subjects: 6, epochs_per_subject: 150, seed: 5, ..Default::default() };
    let c = generate(&d, &p).map_err(|e| e.to_string())?;
    let s = split_subjects(&c, 5).map_err(|e| e.to_string())?;
    Ok((EpochSet::from_subjects(&c, &s.train_subjects), EpochSet::from_subjects(&c, &s.val_subjects)))
}

fn scorer_numerics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        worst = worst.max(gradient_check(&mut rng)?);
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;

    let (train, val) = small_cohort_sets()?;
    let cfg = TrainConfig { max_epochs: 10, seed: 11, ..Default::default() };
    let a = pretrain(&train, &val, &cfg).map_err(|e| e.to_string())?;
    let b = pretrain(&train, &val, &cfg).map_err(|e| e.to_string())?;
    ensure(a.to_json() == b.to_json(), || "same seed gave different checkpoints".into())?;
    let c = pretrain(&train, &val, &TrainConfig { seed: 12, ..cfg }).map_err(|e| e.to_string())?;
    ensure(a.to_json() != c.to_json(), || "different seeds gave the same checkpoint".into())?;
    Ok(format!("100 draws, worst relative gradient error {worst:.1e}; checkpoints bit-identical"))
}

// ---------------------------------------------------------------- 6

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn resampling() -> Check {
    let out = fourier_resample(&Epoch::new(vec![0.0; 7680], 256), 100).map_err(|e| e.to_string())?;
    ensure(out.samples.len() == 3000, || format!("7680 samples became {}", out.samples.len()))?;

    let sine = |rate: u32, n: usize| -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / rate as f64).sin()).collect()
    };
    let y = fourier_resample(&Epoch::new(sine(256, 7680), 256), 100).map_err(|e| e.to_string())?;
    let corr = pearson(&y.samples, &sine(100, 3000));
    ensure(corr > 0.99, || format!("5 Hz correlation {corr}"))?;

    let mut worst = 0.0f64;
    for (n, from, to) in [(7680, 256, 100), (3000, 100, 256), (3750, 125, 100), (6000, 200, 100)] {
        let out = fourier_resample(&Epoch::new(vec![0.7; n], from), to).map_err(|e| e.to_string())?;
        worst = out.samples.iter().fold(worst, |w, v| w.max((v - 0.7).abs()));
    }
    ensure(worst < 1e-9, || format!("DC drift {worst:e}"))?;
    Ok(format!("length 7680->3000; 5 Hz correlation {corr:.6}; DC drift {worst:.1e}"))
}

// ---------------------------------------------------------------- 7

fn run_once(manifest: &Manifest, dir: &Path, jobs: usize) -> Result<(Vec<u8>, BTreeMap<String, Vec<u8>>), String> {
    let ledger_path = dir.join("ledger.jsonl");
    let mut cfg = StudyConfig::new(manifest.clone(), &ledger_path);
    cfg.repeats = 3;
    cfg.jobs = jobs;
    let outcome = run_study(&cfg).map_err(|e| e.to_string())?;
    ensure(outcome.complete(), || format!("{} records still pending", outcome.remaining))?;
    let ledger = RunLedger::read(&ledger_path).map_err(|e| e.to_string())?;
    let analysis = analyze(&ledger, &AnalyzeOptions::default()).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    let files = write_csvs(&analysis, &out).map_err(|e| e.to_string())?;
    let mut tables = BTreeMap::new();
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        tables.insert(name, std::fs::read(&f).map_err(|e| e.to_string())?);
    }
    Ok((std::fs::read(&ledger_path).map_err(|e| e.to_string())?, tables))
}

fn end_to_end() -> Check {
    let manifest = Manifest::load(&manifest_dir().join("manifests/reference.json")).map_err(|e| e.to_string())?;
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ledger_a, tables_a) = run_once(&manifest, first.path(), 0)?;

    let ledger = RunLedger::read(&first.path().join("ledger.jsonl")).map_err(|e| e.to_string())?;
    let analysis = analyze(&ledger, &AnalyzeOptions::default()).map_err(|e| e.to_string())?;
    let rows = &analysis.impact.rows;

    let mut failures = Vec::new();
    for row in rows.iter().filter(|r| r.n_pairs > 0) {
        let (ft, dt) = (row.ft.unwrap().1, row.dt.unwrap().1);
        if ft < dt {
            failures.push(format!("(a) {}: FT {:.2} < DT {:.2}", row.group, ft * 100.0, dt * 100.0));
        }
    }

    let n: f64 = rows.iter().map(|r| r.n_pairs as f64).sum();
    let weighted = |pick: fn(&xferbench::transferscore::ImpactRow) -> Option<(f64, f64)>| {
        rows.iter().filter_map(|r| pick(r).map(|v| v.1 * r.n_pairs as f64)).sum::<f64>() / n * 100.0
    };
    let (ft_all, fs_all) = (weighted(|r| r.ft), weighted(|r| r.fs));
    if ft_all < fs_all - 1.0 {
        failures.push(format!("(b) overall FT {ft_all:.2} < FS {fs_all:.2} - 1"));
    }

    let r_of = |k: GroupKey| rows.iter().find(|r| r.group == k).and_then(|r| r.r);
    let channel_only = r_of(GroupKey::new(false, true, false)).ok_or("channel-only group empty")?;
    let cond_only = r_of(GroupKey::new(false, false, true)).ok_or("condition-only group empty")?;
    let env_groups: Vec<f64> = GroupKey::ALL.iter().filter(|k| k.env_diff).filter_map(|k| r_of(*k)).collect();
    let env_min = env_groups.iter().copied().fold(f64::INFINITY, f64::min);
    if !(env_min > channel_only && channel_only > cond_only) {
        failures.push(format!("(c) env min {env_min:.2}, channel-only {channel_only:.2}, condition-only {cond_only:.2}"));
    }

    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ledger_b, tables_b) = run_once(&manifest, second.path(), 1)?;
    if ledger_a != ledger_b || tables_a != tables_b {
        failures.push("(d) rerun differs".into());
    }

    let summary = format!(
        "FT>=DT in all groups; FT {ft_all:.2} vs FS {fs_all:.2}; r env>={env_min:.2} > channel {channel_only:.2} > condition {cond_only:.2}; rerun identical"
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(failures.join("; "))
    }
}

// ---------------------------------------------------------------- 8

fn id_of(s: &str) -> ChannelId {
    let (d, c) = s.split_once(':').expect("dataset:channel");
    ChannelId::new(d, c)
}

fn as_matrix(v: &Value) -> Matrix {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

fn external_ledger() -> Check {
    let fixtures = manifest_dir().join("tests/fixtures");
    let ledger = RunLedger::read(&fixtures.join("two_target_ledger.jsonl")).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(fixtures.join("two_target_expected.json")).map_err(|e| e.to_string())?;
    let expected: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let analysis = analyze(&ledger, &AnalyzeOptions::default()).map_err(|e| e.to_string())?;

    let sources: Vec<ChannelId> = expected["sources"].as_array().unwrap().iter().map(|s| id_of(s.as_str().unwrap())).collect();
    let targets: Vec<ChannelId> = expected["targets"].as_array().unwrap().iter().map(|s| id_of(s.as_str().unwrap())).collect();
    ensure(analysis.w.sources == sources && analysis.w.targets == targets, || "W axes differ".into())?;

    let mut worst = 0.0f64;
    for (ti, t) in targets.iter().enumerate() {
        let row = expected["w"][ti].as_array().unwrap();
        for (si, s) in sources.iter().enumerate() {
            match (row[si].as_f64(), analysis.w.get(t, s)) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                other => return Err(format!("W[{t}][{s}] presence differs: {other:?}")),
            }
        }
        let pm = analysis.matrices.iter().find(|m| m.target == *t).ok_or_else(|| format!("no matrix for {t}"))?;
        for (key, got) in [("h_raw", &pm.raw), ("h", &pm.normalized)] {
            let want = as_matrix(&expected[key][t.to_string()]);
            ensure(want.len() == got.len(), || format!("{key} size for {t}"))?;
            for (wr, gr) in want.iter().zip(got) {
                worst = worst.max(linf(wr, gr));
            }
        }
    }
    for g in &analysis.generalization {
        let want = expected["generalization"][g.source.to_string()].as_f64().ok_or("missing generalization")?;
        worst = worst.max((want - g.value).abs());
    }
    ensure(worst < 1e-9, || format!("deviation {worst:e}"))?;
    Ok(format!("H, W and generalization within {worst:.1e}"))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 8] = [
        ("1 plan counts", Duration::from_secs(1), plan_counts),
        ("2 relative difference and pairwise arithmetic", Duration::from_secs(1), arithmetic),
        ("3 normalization and eigenvectors", Duration::from_secs(10), eigen),
        ("4 metrics oracle", Duration::from_secs(5), metrics_oracle),
        ("5 scorer numerics", Duration::from_secs(30), scorer_numerics),
        ("6 resampling", Duration::from_secs(5), resampling),
        ("7 end-to-end synthetic study", Duration::from_secs(20 * 60), end_to_end),
        ("8 external ledger", Duration::from_secs(1), external_ledger),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.2?} of {:?}) {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed,
            limit
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
