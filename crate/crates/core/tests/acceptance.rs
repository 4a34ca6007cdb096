//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gradcheck::{self, GRAPH_TOL};
use pairdist::autodiff::Tensor;
use pairdist::data::{
    synth_corpus, FeatureKind, FeatureMatrix, Label, Manifest, ManifestMeta, SynthConfig, UtteranceRecord,
    AP_FEATURES,
};
use pairdist::evaluation::{
    accuracy, audit_protocol, export_report, make_folds, roc_auc, run_cv, soft_vote, CvConfig, CvOutcome,
    InitMode, RunReport, DECISION_THRESHOLD,
};
use pairdist::models::{
    classifier_chain, init_random, load_bundle, save_bundle, AnyModel, ModelBundle, ModelKind, Network, PairInput,
    BCNN1_FLATTEN,
};
use pairdist::training::{enumerate_pairs, evaluate_dev_loss, train, PlateauSchedule, Sample, TrainConfig};

const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const CV_BUDGET: Duration = Duration::from_secs(30 * 60);
const PROPOSED_MIN_AUC: f64 = 0.90;
const PROPOSED_MIN_ACC: f64 = 80.0;
const BCNN2_MIN_AUC: f64 = 0.75;
const NULL_AUC: (f64, f64) = (0.35, 0.65);
const SEEDS: [u64; 3] = [1, 2, 3];
/// Epoch cap for the synthetic cross-validation runs.
const CV_EPOCHS: usize = 3;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (mut worst_op, mut worst_graph, mut checked) = (0.0f64, 0.0f64, 0);
    for &(name, check, tol) in gradcheck::CHECKS {
        let tally = check();
        eprintln!("  {name}: {}", tally.summary());
        checked += tally.checked;
        if tol == GRAPH_TOL {
            worst_graph = worst_graph.max(tally.worst);
        } else {
            worst_op = worst_op.max(tally.worst);
        }
        if let Some(msg) = tally.failure(tol) {
            failures.push(format!("{name}: {msg}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > GRADIENT_BUDGET {
        failures.push(format!("took {:.1} s", elapsed.as_secs_f64()));
    }
    let detail = format!(
        "{} checks, {checked} coordinates; worst op error {worst_op:.1e}, worst graph error {worst_graph:.1e}; {:.1} s",
        gradcheck::CHECKS.len(),
        elapsed.as_secs_f64()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn dimension_chain() -> Verdict {
    let chain = classifier_chain(56).map_err(|e| e.to_string())?;
    let AnyModel::Proposed(net) = init_random(ModelKind::Proposed, AP_FEATURES, 56, 0).unwrap() else {
        unreachable!()
    };
    let fc1 = net.params().by_name("fc1.weight").unwrap().value.shape().to_vec();
    let rep = std::sync::Arc::new(Tensor::new(vec![AP_FEATURES, 56], vec![0.02; AP_FEATURES * 56]).unwrap());
    let forward = net.predict(&PairInput::new(rep.clone(), rep)).is_ok();

    let AnyModel::Bcnn1(b1) = init_random(ModelKind::Bcnn1, AP_FEATURES, 16, 0).unwrap() else {
        unreachable!()
    };
    let b1_fc1 = b1.params().by_name("fc1.weight").unwrap().value.shape().to_vec();
    let b1_forward = b1.predict(&Tensor::zeros(vec![AP_FEATURES, 16])).is_ok();
    ensure(
        chain.flatten == 784 && fc1 == [128, 784] && forward && BCNN1_FLATTEN == 208 && b1_fc1 == [128, 208] && b1_forward,
        format!("proposed flatten {} (fc1 {fc1:?}), B-CNN1 flatten {BCNN1_FLATTEN} (fc1 {b1_fc1:?})", chain.flatten),
    )
}

fn balanced(healthy: usize, dysarthric: usize, items: usize) -> Manifest {
    let mut entries = Vec::new();
    for (label, n, tag) in [(Label::Healthy, healthy, "h"), (Label::Dysarthric, dysarthric, "d")] {
        for s in 0..n {
            for i in 0..items {
                entries.push(UtteranceRecord {
                    speaker_id: format!("{tag}{s:03}"),
                    label,
                    item_id: format!("w{i:02}"),
                    path: PathBuf::from(format!("{tag}{s:03}/w{i:02}.pdn")),
                    features: FeatureMatrix::new(1, 1, vec![0.5]).unwrap(),
                });
            }
        }
    }
    let meta = ManifestMeta {
        database: "shape".into(),
        frame_ms: 10.0,
        kind: FeatureKind::Ap,
    };
    Manifest::new(meta, entries).unwrap()
}

fn brute_force_total(m: &Manifest, k: usize) -> Result<(usize, usize), String> {
    let plan = make_folds(m, k, 0).map_err(|e| e.to_string())?;
    let (mut total, mut oracle) = (0, 0);
    for fold in plan.folds() {
        let refs = fold.references(&plan.labels);
        let pairs = enumerate_pairs(m, &fold.test, &refs).map_err(|e| e.to_string())?;
        let got: BTreeSet<(usize, usize)> = pairs.iter().map(|p| (p.test, p.reference)).collect();
        let mut want = BTreeSet::new();
        for (i, t) in m.entries.iter().enumerate() {
            if !fold.test.contains(&t.speaker_id) {
                continue;
            }
            for (j, r) in m.entries.iter().enumerate() {
                if refs.contains(&r.speaker_id) && r.item_id == t.item_id && r.speaker_id != t.speaker_id {
                    want.insert((i, j));
                }
            }
        }
        if got != want || got.len() != pairs.len() {
            return Err(format!("fold {} differs from the brute-force pairs", fold.index));
        }
        total += pairs.len();
        oracle += want.len();
    }
    Ok((total, oracle))
}

fn pair_counts() -> Verdict {
    let (a, a_oracle) = brute_force_total(&balanced(50, 50, 24), 10)?;
    let (b, b_oracle) = brute_force_total(&balanced(20, 20, 54), 5)?;
    ensure(
        a == 96000 && b == 25920 && a == a_oracle && b == b_oracle,
        format!("100 speakers × 24 items, 10 folds: {a}; 40 speakers × 54 items, 5 folds: {b}"),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let label = |d: bool| if d { Label::Dysarthric } else { Label::Healthy };
    let mut auc_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let grid = rng.random_range(3..40);
        let mut scores: Vec<(f64, Label)> = (0..n)
            .map(|_| (rng.random_range(0..=grid) as f64 / grid as f64, label(rng.random_bool(0.5))))
            .collect();
        scores[0].1 = Label::Healthy;
        scores[1].1 = Label::Dysarthric;
        let (mut wins, mut ties, mut nh, mut nd) = (0u64, 0u64, 0u64, 0u64);
        for (d, _) in scores.iter().filter(|s| s.1 == Label::Dysarthric) {
            nd += 1;
            for (h, _) in scores.iter().filter(|s| s.1 == Label::Healthy) {
                wins += (d > h) as u64;
                ties += (d == h) as u64;
            }
        }
        nh += scores.len() as u64 - nd;
        let want = (wins as f64 + 0.5 * ties as f64) / (nh as f64 * nd as f64);
        if roc_auc(&scores).map_err(|e| e.to_string())? != want {
            auc_mismatch += 1;
        }
    }

    let mut acc_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..80);
        let scores: Vec<(f64, Label)> = (0..n)
            .map(|_| (rng.random_range(0..=20) as f64 / 20.0, label(rng.random_bool(0.4))))
            .collect();
        let mut confusion = [[0usize; 2]; 2];
        for (s, l) in &scores {
            confusion[l.index()][(*s > 0.5) as usize] += 1;
        }
        let want = 100.0 * (confusion[0][0] + confusion[1][1]) as f64 / n as f64;
        if accuracy(&scores, DECISION_THRESHOLD) != want {
            acc_mismatch += 1;
        }
    }

    let mut vote_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let preds: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let p: f64 = rng.random();
                [1.0 - p, p]
            })
            .collect();
        let want = preds.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        vote_err = vote_err.max((soft_vote("s", &preds).map_err(|e| e.to_string())? - want).abs());
    }
    ensure(
        auc_mismatch == 0 && acc_mismatch == 0 && vote_err <= 1e-6,
        format!(
            "AUC mismatches {auc_mismatch}/1000, accuracy mismatches {acc_mismatch}/100, worst soft-vote error {vote_err:.1e}"
        ),
    )
}

fn cv_config(seeds: &[u64], epochs: usize, jobs: usize, out_dir: Option<PathBuf>) -> CvConfig {
    CvConfig {
        model: ModelKind::Proposed,
        init: InitMode::Transfer,
        frames: 56,
        folds: 5,
        fold_seed: 0,
        seeds: seeds.to_vec(),
        train: TrainConfig {
            max_epochs: epochs,
            ..TrainConfig::default()
        },
        jobs,
        config_hash: "acceptance".into(),
        out_dir,
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct SyntheticRun {
    outcome: CvOutcome,
    elapsed: Duration,
}

impl SyntheticRun {
    fn new(severity: f32) -> Result<Self, String> {
        let corpus = synth_corpus(&SynthConfig {
            severity,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let start = Instant::now();
        let outcome = run_cv(&corpus, &cv_config(&SEEDS, CV_EPOCHS, jobs(), None)).map_err(|e| e.to_string())?;
        Ok(SyntheticRun {
            outcome,
            elapsed: start.elapsed(),
        })
    }

    fn report(&self, kind: ModelKind) -> &RunReport {
        std::iter::once(&self.outcome.report)
            .chain(&self.outcome.baselines)
            .find(|r| r.model == kind)
            .expect("transfer runs report every model")
    }

    fn auc(&self, kind: ModelKind) -> f64 {
        self.report(kind).aggregate.auc_mean
    }
}

fn protocol(runs: &[&SyntheticRun]) -> Verdict {
    let mut problems = Vec::new();
    let mut audited = 0;
    for run in runs {
        let plan = &run.outcome.plan;
        problems.extend(audit_protocol(plan, &run.outcome.audits));
        audited += run.outcome.audits.len();
        let (h, d) = plan.labels.values().fold((0, 0), |(h, d), l| match l {
            Label::Healthy => (h + 1, d),
            Label::Dysarthric => (h, d + 1),
        });
        let k = plan.k as f64;
        for (i, (fh, fd)) in plan.class_counts().into_iter().enumerate() {
            if (fh as f64 - h as f64 / k).abs() > 1.0 || (fd as f64 - d as f64 / k).abs() > 1.0 {
                problems.push(format!("fold {i} has {fh} healthy and {fd} dysarthric speakers"));
            }
        }
    }
    let detail = format!("{audited} (seed, fold, model) jobs audited, {} violations", problems.len());
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", problems.join("; ")))
    }
}

fn summary(run: &SyntheticRun, kind: ModelKind) -> String {
    let g = run.report(kind).aggregate;
    format!("{kind} AUC {:.3}±{:.3} acc {:.1}±{:.1}", g.auc_mean, g.auc_std, g.acc_mean, g.acc_std)
}

fn end_to_end(run: &SyntheticRun, null: &SyntheticRun) -> Verdict {
    let proposed = run.report(ModelKind::Proposed).aggregate;
    let null_ok = [ModelKind::Proposed, ModelKind::Bcnn1, ModelKind::Bcnn2]
        .iter()
        .all(|&k| (NULL_AUC.0..=NULL_AUC.1).contains(&null.auc(k)));
    let ok = run.elapsed < CV_BUDGET
        && proposed.auc_mean >= PROPOSED_MIN_AUC
        && proposed.acc_mean >= PROPOSED_MIN_ACC
        && run.auc(ModelKind::Bcnn2) >= BCNN2_MIN_AUC
        && null_ok;
    ensure(
        ok,
        format!(
            "{:.1} min on {} worker(s), {CV_EPOCHS} epochs; {}; {}; {}; severity 0: {} / {} / {}",
            run.elapsed.as_secs_f64() / 60.0,
            jobs(),
            summary(run, ModelKind::Proposed),
            summary(run, ModelKind::Bcnn2),
            summary(run, ModelKind::Bcnn1),
            summary(null, ModelKind::Proposed),
            summary(null, ModelKind::Bcnn2),
            summary(null, ModelKind::Bcnn1),
        ),
    )
}

fn ordering(run: &SyntheticRun) -> Verdict {
    let (p, b) = (run.auc(ModelKind::Proposed), run.auc(ModelKind::Bcnn2));
    ensure(p >= b, format!("mean AUC proposed {p:.4} vs B-CNN2 {b:.4}"))
}

fn bundles_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("bundles"))
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn determinism() -> Verdict {
    let corpus = synth_corpus(&SynthConfig {
        healthy: 8,
        dysarthric: 8,
        items: 3,
        seed: 17,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut metrics = Vec::new();
    let mut bundles = Vec::new();
    for (i, workers) in [1, 2].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let mut cfg = cv_config(&[5, 6], 1, workers, Some(dir.clone()));
        cfg.folds = 4;
        let out = run_cv(&corpus, &cfg).map_err(|e| e.to_string())?;
        export_report(&out.report, &dir).map_err(|e| e.to_string())?;
        metrics.push(std::fs::read(dir.join("proposed.metrics.json")).map_err(|e| e.to_string())?);
        bundles.push(bundles_in(&dir));
    }
    let same_metrics = metrics[0] == metrics[1];
    let same_bundles = bundles[0].len() == bundles[1].len()
        && bundles[0].iter().zip(&bundles[1]).all(|(a, b)| std::fs::read(a).ok() == std::fs::read(b).ok());

    let mut round_trips = 0;
    for path in &bundles[0] {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        let bundle: ModelBundle = load_bundle(path).map_err(|e| e.to_string())?;
        let copy = tmp.path().join("copy.pdnb");
        save_bundle(&bundle, &copy).map_err(|e| e.to_string())?;
        if bundle.to_bytes() == bytes && std::fs::read(&copy).map_err(|e| e.to_string())? == bytes {
            round_trips += 1;
        }
    }
    let n = bundles[0].len();
    ensure(
        same_metrics && same_bundles && n > 0 && round_trips == n,
        format!(
            "metrics JSON identical across repeats: {same_metrics}; {n} bundles identical: {same_bundles}; bit-exact bundle round trips {round_trips}/{n}"
        ),
    )
}

fn schedule() -> Verdict {
    let mut problems = Vec::new();

    // Division by 5 exactly on the fifth consecutive non-improving epoch.
    let mut s = PlateauSchedule::new(0.05, 5.0, 5, 1e-6, 100, 1e-6);
    let trace = [1.0, 0.8, 0.9, 0.9, 0.9, 0.9, 0.7, 0.9, 0.9, 0.9, 0.9, 0.9];
    let steps: Vec<_> = trace.iter().map(|&l| s.observe(l)).collect();
    let reduced: Vec<usize> = steps.iter().filter(|st| st.lr_reduced).map(|st| st.epoch).collect();
    if reduced != [12] || steps[11].lr != 0.05 || s.lr() != 0.05 / 5.0 {
        problems.push(format!("plateau trace reduced at {reduced:?}, lr now {}", s.lr()));
    }

    // Stop at the epoch cap while still improving.
    let mut s = PlateauSchedule::new(0.05, 5.0, 5, 1e-6, 100, 1e-6);
    let first_stop = (1..=200).map(|e| s.observe(1.0 / e as f64)).find(|st| st.stop).map(|st| st.epoch);
    if first_stop != Some(100) {
        problems.push(format!("improving trace stopped at {first_stop:?}"));
    }

    // Stop once lr < 1e-6: a flat loss reduces at epochs 6, 11, ... and
    // 0.05 / 5^7 is the first rate below 1e-6.
    let mut s = PlateauSchedule::new(0.05, 5.0, 5, 1e-6, 100, 1e-6);
    let first_stop = (1..=100).map(|_| s.observe(0.5)).find(|st| st.stop).map(|st| st.epoch);
    if first_stop != Some(1 + 5 * 7) || s.lr() >= 1e-6 {
        problems.push(format!("flat trace stopped at {first_stop:?} with lr {}", s.lr()));
    }

    // The trainer follows the same state machine and returns the best-dev
    // checkpoint.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut segs = |n: usize| -> Vec<Sample<Tensor>> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Healthy } else { Label::Dysarthric };
                let shift = if label == Label::Dysarthric { 0.5 } else { -0.5 };
                let data = (0..6 * 16).map(|_| rng.random_range(-1.0f32..1.0) + shift).collect();
                Sample {
                    input: Tensor::new(vec![6, 16], data).unwrap(),
                    label,
                }
            })
            .collect()
    };
    let (train_set, dev_set) = (segs(48), segs(16));
    let AnyModel::Bcnn1(mut net) = init_random(ModelKind::Bcnn1, 6, 16, 3).unwrap() else {
        unreachable!()
    };
    let cfg = TrainConfig {
        batch_size: 8,
        lr0: 0.2,
        patience: 2,
        max_epochs: 25,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = train(&mut net, &train_set, &dev_set, &cfg).map_err(|e| e.to_string())?;
    let mut replay = PlateauSchedule::new(cfg.lr0, cfg.lr_factor, cfg.patience, cfg.lr_min, cfg.max_epochs, cfg.min_delta);
    for (i, e) in out.epochs.iter().enumerate() {
        let st = replay.observe(e.dev_loss);
        if st.lr != e.lr || st.improved != e.improved || st.stop != (i + 1 == out.epochs.len()) {
            problems.push(format!("trainer epoch {} diverges from the schedule", e.epoch));
            break;
        }
    }
    let best = out.epochs.iter().filter(|e| e.improved).last().map(|e| (e.epoch, e.dev_loss));
    let reloaded = evaluate_dev_loss(&net, &dev_set).map_err(|e| e.to_string())?;
    if best != Some((out.best_epoch, out.best_dev_loss)) || (reloaded - out.best_dev_loss).abs() > 1e-12 {
        problems.push(format!(
            "checkpoint: best {best:?}, reported ({}, {}), returned model scores {reloaded}",
            out.best_epoch, out.best_dev_loss
        ));
    }
    let reductions = out.epochs.windows(2).filter(|w| w[1].lr < w[0].lr).count();
    let detail = format!(
        "plateau, cap and lr-floor traces; trainer replay over {} epochs with {reductions} reductions, best epoch {}",
        out.epochs.len(),
        out.best_epoch
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", problems.join("; ")))
    }
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(panic) => Err(format!(
            "panicked: {}",
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn synthetic(severity: f32) -> Result<SyntheticRun, String> {
    catch_unwind(|| SyntheticRun::new(severity)).unwrap_or_else(|_| Err("cross-validation panicked".into()))
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |id: usize, name: &'static str, v: Verdict| {
        match &v {
            Ok(d) => println!("criterion {id} {name}: PASS ({d})"),
            Err(d) => println!("criterion {id} {name}: FAIL ({d})"),
        }
        results.push((id, name, v));
    };

    record(1, "gradient suite", guarded(gradient_suite));
    record(2, "dimension chain", guarded(dimension_chain));
    record(3, "pair counts", guarded(pair_counts));
    record(4, "metric oracles", guarded(metric_oracles));

    eprintln!("synthetic cross-validation, default severity ...");
    let run = synthetic(1.0);
    eprintln!("synthetic cross-validation, severity 0 ...");
    let null = synthetic(0.0);
    match (&run, &null) {
        (Ok(run), Ok(null)) => {
            record(5, "protocol invariants", guarded(|| protocol(&[run, null])));
            record(6, "synthetic end-to-end", guarded(|| end_to_end(run, null)));
            record(7, "ordering", guarded(|| ordering(run)));
        }
        _ => {
            let why = [run.as_ref().err(), null.as_ref().err()]
                .into_iter()
                .flatten()
                .cloned()
                .collect::<Vec<_>>()
                .join("; ");
            for (id, name) in [(5, "protocol invariants"), (6, "synthetic end-to-end"), (7, "ordering")] {
                record(id, name, Err(format!("cross-validation failed: {why}")));
            }
        }
    }
    record(8, "determinism", guarded(determinism));
    record(9, "schedule state machine", guarded(schedule));

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
