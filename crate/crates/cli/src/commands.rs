use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pairdist::config::RunConfig;
use pairdist::data::{
    read_wav, stft_logmag, synth_corpus, FeatureKind, Label, Manifest, ManifestMeta, SynthConfig,
    UtteranceRecord,
};
use pairdist::evaluation::{
    audit_protocol, comparison_table, export_report, load_metrics, make_folds, pair_predictions,
    run_cv, run_fold, segment_predictions, soft_vote, DECISION_THRESHOLD,
};
use pairdist::models::{load_bundle, ModelKind};
use pairdist::training::enumerate_pairs;
use pairdist::{Error, Result};

use crate::{FeaturesArgs, PredictArgs, ReportArgs, RunArgs, SynthArgs, TrainArgs};

const INCOMPLETE: &str = "INCOMPLETE";

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{} does not exist or is not a file", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        healthy: a.healthy,
        dysarthric: a.dysarthric,
        items: a.items,
        min_frames: a.min_frames,
        max_frames: a.max_frames,
        severity: a.severity,
        seed: a.seed,
    };
    let manifest = synth_corpus(&cfg)?;
    let path = manifest.write(&a.out)?;
    let frames: Vec<usize> = manifest.entries.iter().map(|e| e.features.frames()).collect();
    println!(
        "wrote {}: {} speakers ({} healthy, {} dysarthric), {} items, {} utterances, {}-{} frames",
        path.display(),
        a.healthy + a.dysarthric,
        a.healthy,
        a.dysarthric,
        a.items,
        manifest.entries.len(),
        frames.iter().min().copied().unwrap_or(0),
        frames.iter().max().copied().unwrap_or(0),
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct WavRow {
    speaker_id: String,
    label: u8,
    item_id: String,
    path: String,
}

pub fn features(a: &FeaturesArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(&a.manifest)
        .map_err(|e| Error::Input(format!("{}: {e}", a.manifest.display())))?;
    let mut entries = Vec::new();
    for row in reader.deserialize::<WavRow>() {
        let row = row.map_err(|e| Error::Input(format!("{}: {e}", a.manifest.display())))?;
        let wav = base.join(&row.path);
        let samples = read_wav(&wav).map_err(|e| e.context(wav.display().to_string()))?;
        let features = stft_logmag(&samples).map_err(|e| e.context(wav.display().to_string()))?;
        entries.push(UtteranceRecord {
            path: PathBuf::from(format!("features/{}/{}.pdn", row.speaker_id, row.item_id)),
            speaker_id: row.speaker_id,
            label: Label::from_index(row.label)?,
            item_id: row.item_id,
            features,
        });
    }
    let database = base
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let manifest = Manifest::new(
        ManifestMeta {
            database,
            frame_ms: 10.0,
            kind: FeatureKind::Stft,
        },
        entries,
    )?;
    let path = manifest.write(&a.out)?;
    println!("wrote {} ({} utterances, 129 bins)", path.display(), manifest.entries.len());
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p)?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    let flags: [(&str, Option<String>); 10] = [
        ("model", a.model.clone()),
        ("manifest", a.manifest.as_ref().map(|p| p.display().to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
        ("seeds", a.seeds.clone()),
        ("jobs", a.jobs.map(|v| v.to_string())),
        ("s", a.frames.map(|v| v.to_string())),
        ("init", a.init.clone()),
        ("features", a.features.clone()),
        ("folds", a.folds.map(|v| v.to_string())),
        ("max_epochs", a.max_epochs.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest given (--manifest or `manifest =`)".into()))?;
    require_file(path)?;
    Manifest::load(path, cfg.features)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (--out)".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(
        &out.join("config.txt"),
        &format!("{}config_hash={}\n", cfg.canonical(), cfg.hash()),
    )?;
    Ok(out)
}

/// Runs `body` with an `INCOMPLETE` marker in `out` that is only removed on
/// success; on failure the marker holds the error.
fn marked<T>(out: &Path, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let marker = out.join(INCOMPLETE);
    write_text(&marker, "run in progress\n")?;
    match body() {
        Ok(v) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(v)
        }
        Err(e) => {
            let _ = write_text(&marker, &format!("run failed: {e}\n"));
            Err(e)
        }
    }
}

pub fn cv(a: &RunArgs) -> Result<()> {
    let cfg = resolve(a)?;
    let manifest = load_manifest(&cfg)?;
    let out = prepare_out(&cfg)?;
    let outcome = marked(&out, || run_cv(&manifest, &cfg.cv_config()))?;
    let violations = audit_protocol(&outcome.plan, &outcome.audits);
    let mut audit = format!("violations: {}\n", violations.len());
    for v in &violations {
        audit.push_str(v);
        audit.push('\n');
    }
    write_text(&out.join("audit.txt"), &audit)?;
    for report in std::iter::once(&outcome.report).chain(&outcome.baselines) {
        export_report(report, &out)?;
        let g = &report.aggregate;
        println!(
            "{:<9} AUC {:.4} ± {:.4}   accuracy {:.2} ± {:.2}",
            report.model, g.auc_mean, g.auc_std, g.acc_mean, g.acc_std
        );
    }
    if !violations.is_empty() {
        return Err(Error::Evaluation(format!(
            "{} protocol violation(s), see audit.txt",
            violations.len()
        )));
    }
    println!("config hash {}", cfg.hash());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve(&a.run)?;
    let manifest = load_manifest(&cfg)?;
    let out = prepare_out(&cfg)?;
    let plan = make_folds(&manifest, cfg.folds, cfg.fold_seed)?;
    let cv_cfg = cfg.cv_config();
    for &seed in &cfg.seeds {
        let results = marked(&out, || run_fold(&manifest, &cv_cfg, &plan, seed, a.fold))?;
        for r in results {
            let rec = &r.record;
            println!(
                "{} seed {seed} fold {}: {} (best dev loss {:.5} at epoch {}), bundle under {}",
                rec.model,
                a.fold,
                if rec.cached { "cached" } else { "trained" },
                rec.best_dev_loss,
                rec.best_epoch,
                out.join("bundles").display()
            );
        }
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    require_file(&a.bundle)?;
    require_file(&a.manifest)?;
    let kind: FeatureKind = a.features.parse()?;
    let bundle = load_bundle(&a.bundle)?;
    let mut manifest = Manifest::load(&a.manifest, kind)?;
    let speaker = match &a.test_manifest {
        Some(p) => {
            require_file(p)?;
            let test = Manifest::load(p, kind)?;
            let ids: BTreeSet<String> = test.speakers().into_keys().collect();
            let speaker = match (&a.speaker, ids.len()) {
                (Some(s), _) => s.clone(),
                (None, 1) => ids.into_iter().next().expect("one speaker"),
                (None, n) => {
                    return Err(Error::Config(format!(
                        "test manifest holds {n} speakers; choose one with --speaker"
                    )))
                }
            };
            let entries: Vec<UtteranceRecord> =
                test.entries.into_iter().filter(|e| e.speaker_id == speaker).collect();
            if entries.is_empty() {
                return Err(Error::Input(format!("speaker {speaker} not in {}", p.display())));
            }
            manifest.entries.retain(|e| e.speaker_id != speaker);
            manifest.entries.extend(entries);
            manifest.validate()?;
            speaker
        }
        None => a
            .speaker
            .clone()
            .ok_or_else(|| Error::Config("--speaker is required without --test-manifest".into()))?,
    };
    let labels = manifest.speakers();
    if !labels.contains_key(&speaker) {
        return Err(Error::Input(format!("speaker {speaker} not found")));
    }
    let test: BTreeSet<String> = [speaker.clone()].into();
    let references: BTreeSet<String> = labels
        .iter()
        .filter(|(s, l)| **l == Label::Healthy && **s != speaker)
        .map(|(s, _)| s.clone())
        .collect();

    let preds = if bundle.kind == ModelKind::Bcnn1 {
        let p = segment_predictions(&bundle, &manifest, &speaker)?;
        if a.per_pair {
            println!("segment,probability");
            for (i, pr) in p.iter().enumerate() {
                println!("{i},{}", pr[1]);
            }
        }
        p
    } else {
        if references.is_empty() {
            return Err(Error::Input("no healthy reference speakers available".into()));
        }
        let pairs = enumerate_pairs(&manifest, &test, &references)?;
        if pairs.is_empty() {
            return Err(Error::Input(format!(
                "no items of {speaker} match any reference utterance"
            )));
        }
        let p = pair_predictions(&bundle, &manifest, &pairs)?;
        if a.per_pair {
            println!("item_id,reference,probability");
            for (pair, pr) in pairs.iter().zip(&p) {
                println!(
                    "{},{},{}",
                    pair.item_id, manifest.entries[pair.reference].speaker_id, pr[1]
                );
            }
        }
        p
    };
    if preds.is_empty() {
        return Err(Error::Input(format!("speaker {speaker} yields nothing to score")));
    }
    let score = soft_vote(&speaker, &preds)?;
    let decision = if score > DECISION_THRESHOLD { "dysarthric" } else { "healthy" };
    println!("speaker {speaker}: score {score} over {} votes -> {decision}", preds.len());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for p in &a.metrics {
        require_file(p)?;
        runs.push(load_metrics(p)?);
    }
    let (text, csv) = comparison_table(&runs);
    print!("{text}");
    if let Some(path) = &a.csv {
        write_text(path, &csv)?;
    }
    Ok(())
}
