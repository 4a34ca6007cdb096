use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, Fold, FoldPlan};
use super::metrics::{accuracy, mean_std, roc_auc, roc_points, RocPoint, DECISION_THRESHOLD};
use super::scoring::{
    fit_stats, kl_samples, proposed_samples, resized_inputs, score_speakers, segment_samples,
    SpeakerScore,
};
use crate::data::{subseed, FeatureKind, Label, Manifest};
use crate::error::{Error, Result};
use crate::models::{
    init_random, init_transfer, load_bundle, save_bundle, AnyModel, ModelBundle, ModelKind,
    Provenance,
};
use crate::training::{enumerate_pairs, train, write_epoch_log, EpochReport, PairSample, TrainConfig};

const INIT_STREAM: u64 = 31;
const TRAIN_STREAM: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    /// Front-end from B-CNN1, classifier from B-CNN2, both trained on the
    /// same fold and seed.
    Transfer,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(InitMode::Random),
            "transfer" => Ok(InitMode::Transfer),
            other => Err(Error::Config(format!("unknown init `{other}` (random|transfer)"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Random => "random",
            InitMode::Transfer => "transfer",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub model: ModelKind,
    pub init: InitMode,
    /// Fixed representation length S.
    pub frames: usize,
    pub folds: usize,
    /// Seeds the speaker partition, which stays fixed across training seeds.
    pub fold_seed: u64,
    pub seeds: Vec<u64>,
    /// `seed` is ignored; each run derives its own from the run seed.
    pub train: TrainConfig,
    /// Concurrent (seed, fold) jobs.
    pub jobs: usize,
    pub config_hash: String,
    /// Bundles, epoch logs and the baseline cache go here when set.
    pub out_dir: Option<PathBuf>,
}

impl CvConfig {
    pub fn validate(&self, features: FeatureKind) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        if self.init == InitMode::Transfer && self.model != ModelKind::Proposed {
            return Err(Error::Config(format!(
                "transfer initialisation applies to the proposed model, not {}",
                self.model
            )));
        }
        let needs_ap = self.model == ModelKind::Bcnn2 || self.init == InitMode::Transfer;
        if needs_ap && features != FeatureKind::Ap {
            return Err(Error::Config(format!(
                "{} with {} init needs AP features, corpus has {features}",
                self.model, self.init
            )));
        }
        Ok(())
    }
}

/// Which speakers each stage of one (seed, fold, model) job touched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAudit {
    pub seed: u64,
    pub fold: usize,
    pub model: ModelKind,
    pub test: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    /// Speakers on either side of any training sample.
    pub training_speakers: BTreeSet<String>,
    /// Speakers on either side of any dev sample.
    pub dev_sample_speakers: BTreeSet<String>,
    pub references: BTreeSet<String>,
    pub zscore_speakers: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRecord {
    pub seed: u64,
    pub fold: usize,
    pub model: ModelKind,
    /// Empty when the bundle came from the cache.
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub cached: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub seed: u64,
    pub fold: usize,
    pub speakers: Vec<SpeakerScore>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub auc: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auc_mean: f64,
    pub auc_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

/// Pooled speaker-level results of one model over every seed and fold.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config_hash: String,
    pub model: ModelKind,
    pub database: String,
    pub scores: Vec<FoldScores>,
    pub seeds: Vec<SeedMetrics>,
    pub aggregate: Aggregate,
    pub roc: Vec<(u64, Vec<RocPoint>)>,
}

/// Pools each seed's speaker scores across folds, computes AUC and
/// accuracy per seed, then mean and sample std across seeds.
pub fn assemble_report(
    model: ModelKind,
    database: &str,
    config_hash: &str,
    mut scores: Vec<FoldScores>,
) -> Result<RunReport> {
    scores.sort_by_key(|s| (s.seed, s.fold));
    let mut by_seed: BTreeMap<u64, Vec<(f64, Label)>> = BTreeMap::new();
    for fs in &scores {
        by_seed
            .entry(fs.seed)
            .or_default()
            .extend(fs.speakers.iter().map(|s| (s.score, s.label)));
    }
    let mut seeds = Vec::new();
    let mut roc = Vec::new();
    for (&seed, pooled) in &by_seed {
        seeds.push(SeedMetrics {
            seed,
            auc: roc_auc(pooled).map_err(|e| e.context(format!("seed {seed}")))?,
            accuracy: accuracy(pooled, DECISION_THRESHOLD),
        });
        roc.push((seed, roc_points(pooled)?));
    }
    Ok(RunReport {
        config_hash: config_hash.to_string(),
        model,
        database: database.to_string(),
        aggregate: aggregate_of(&seeds),
        scores,
        seeds,
        roc,
    })
}

pub fn aggregate_of(seeds: &[SeedMetrics]) -> Aggregate {
    let aucs: Vec<f64> = seeds.iter().map(|s| s.auc).collect();
    let accs: Vec<f64> = seeds.iter().map(|s| s.accuracy).collect();
    let (auc_mean, auc_std) = mean_std(&aucs);
    let (acc_mean, acc_std) = mean_std(&accs);
    Aggregate {
        auc_mean,
        auc_std,
        acc_mean,
        acc_std,
    }
}

/// Everything a cross-validation run produced. `baselines` holds the
/// B-CNN1 and B-CNN2 reports trained on the way to a transfer-initialised
/// proposed model.
#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub report: RunReport,
    pub baselines: Vec<RunReport>,
    pub audits: Vec<FoldAudit>,
    pub training: Vec<TrainingRecord>,
}

/// Every protocol violation found in `audits`, as readable messages.
pub fn audit_protocol(plan: &FoldPlan, audits: &[FoldAudit]) -> Vec<String> {
    let mut out = Vec::new();
    let (n_h, n_d) = plan.labels.values().fold((0, 0), |(h, d), l| match l {
        Label::Healthy => (h + 1, d),
        Label::Dysarthric => (h, d + 1),
    });
    let k = plan.k as f64;
    for (i, (h, d)) in plan.class_counts().into_iter().enumerate() {
        if (h as f64 - n_h as f64 / k).abs() >= 1.0 || (d as f64 - n_d as f64 / k).abs() >= 1.0 {
            out.push(format!("fold {i} is not stratified: {h} healthy, {d} dysarthric"));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, fold) in plan.partition.iter().enumerate() {
        for s in fold {
            if !seen.insert(s) {
                out.push(format!("speaker {s} appears in more than one fold (again in {i})"));
            }
        }
    }
    if seen.len() != plan.labels.len() {
        out.push(format!("folds cover {} of {} speakers", seen.len(), plan.labels.len()));
    }
    for a in audits {
        let tag = format!("seed {} fold {} {}", a.seed, a.fold, a.model);
        let mut check = |who: &BTreeSet<String>, role: &str, stage: &BTreeSet<String>, stage_name: &str| {
            for s in who.intersection(stage) {
                out.push(format!("{tag}: {role} speaker {s} used in {stage_name}"));
            }
        };
        check(&a.test, "test", &a.training_speakers, "training samples");
        check(&a.test, "test", &a.dev_sample_speakers, "dev samples");
        check(&a.test, "test", &a.references, "references");
        check(&a.test, "test", &a.zscore_speakers, "the z-score fit");
        check(&a.test, "test", &a.dev, "the dev set");
        check(&a.dev, "dev", &a.training_speakers, "training samples");
        check(&a.dev, "dev", &a.references, "references");
        check(&a.dev, "dev", &a.zscore_speakers, "the z-score fit");
        for r in &a.references {
            if plan.labels.get(r) != Some(&Label::Healthy) {
                out.push(format!("{tag}: reference {r} is not a healthy speaker"));
            }
        }
    }
    out
}

/// One model trained on one (seed, fold) and scored on its test speakers.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub bundle: ModelBundle,
    pub scores: Vec<SpeakerScore>,
    pub audit: FoldAudit,
    pub record: TrainingRecord,
}

struct Job<'a> {
    manifest: &'a Manifest,
    cfg: &'a CvConfig,
    seed: u64,
    fold: Fold,
    references: BTreeSet<String>,
}

fn speakers_of(manifest: &Manifest, pairs: &[PairSample]) -> BTreeSet<String> {
    pairs
        .iter()
        .flat_map(|p| [p.test, p.reference])
        .map(|i| manifest.entries[i].speaker_id.clone())
        .collect()
}

impl<'a> Job<'a> {
    fn tag(&self, kind: ModelKind) -> String {
        format!("{kind}_seed{}_fold{}", self.seed, self.fold.index)
    }

    fn provenance(&self, init: InitMode) -> Provenance {
        Provenance {
            seed: self.seed,
            fold: Some(self.fold.index as u32),
            config_hash: self.cfg.config_hash.clone(),
            init: init.to_string(),
        }
    }

    fn train_config(&self, kind: ModelKind) -> TrainConfig {
        TrainConfig {
            seed: subseed(self.seed, TRAIN_STREAM, self.fold.index as u64, kind.tag() as u64),
            ..self.cfg.train.clone()
        }
    }

    fn init_seed(&self, kind: ModelKind) -> u64 {
        subseed(self.seed, INIT_STREAM, self.fold.index as u64, kind.tag() as u64)
    }

    fn audit(&self, kind: ModelKind, training: BTreeSet<String>, dev: BTreeSet<String>) -> FoldAudit {
        FoldAudit {
            seed: self.seed,
            fold: self.fold.index,
            model: kind,
            test: self.fold.test.clone(),
            dev: self.fold.dev.clone(),
            training_speakers: training,
            dev_sample_speakers: dev,
            references: if kind == ModelKind::Bcnn1 {
                BTreeSet::new()
            } else {
                self.references.clone()
            },
            zscore_speakers: if kind == ModelKind::Bcnn2 {
                BTreeSet::new()
            } else {
                self.fold.train.clone()
            },
        }
    }

    fn cache_path(&self, kind: ModelKind) -> Option<PathBuf> {
        let dir = self.cfg.out_dir.as_ref()?;
        let hash: String = self.cfg.config_hash.chars().take(16).collect();
        Some(dir.join("cache").join(format!("{}_{hash}.pdnb", self.tag(kind))))
    }

    fn cached(&self, kind: ModelKind) -> Option<ModelBundle> {
        let path = self.cache_path(kind)?;
        if !path.exists() {
            return None;
        }
        match load_bundle(&path) {
            Ok(b) if b.kind == kind && b.provenance.config_hash == self.cfg.config_hash => {
                log::info!("reusing cached {}", path.display());
                Some(b)
            }
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn finish(
        &self,
        model: AnyModel,
        stats: crate::data::ZScoreStats,
        init: InitMode,
        outcome: crate::training::TrainOutcome,
        audit: FoldAudit,
        cache: bool,
    ) -> Result<FoldResult> {
        let kind = model.kind();
        let bundle = model.into_bundle(stats, self.provenance(init));
        if let Some(dir) = &self.cfg.out_dir {
            let name = self.tag(kind);
            write_epoch_log(&dir.join("logs").join(format!("{name}.csv")), &outcome.epochs)?;
            save_bundle(&bundle, &dir.join("bundles").join(format!("{name}.pdnb")))?;
            if cache {
                if let Some(path) = self.cache_path(kind) {
                    save_bundle(&bundle, &path)?;
                }
            }
        }
        let scores = score_speakers(&bundle, self.manifest, &self.fold.test, &self.references)?;
        Ok(FoldResult {
            bundle,
            scores,
            audit,
            record: TrainingRecord {
                seed: self.seed,
                fold: self.fold.index,
                model: kind,
                best_epoch: outcome.best_epoch,
                best_dev_loss: outcome.best_dev_loss,
                epochs: outcome.epochs,
                cached: false,
            },
        })
    }

    /// Rebuilds the result of a cached baseline without retraining.
    fn from_cache(&self, bundle: ModelBundle) -> Result<FoldResult> {
        let kind = bundle.kind;
        let (training, dev) = if kind == ModelKind::Bcnn1 {
            (self.fold.train.clone(), self.fold.dev.clone())
        } else {
            let t = enumerate_pairs(self.manifest, &self.fold.train, &self.references)?;
            let d = enumerate_pairs(self.manifest, &self.fold.dev, &self.references)?;
            (speakers_of(self.manifest, &t), speakers_of(self.manifest, &d))
        };
        let scores = score_speakers(&bundle, self.manifest, &self.fold.test, &self.references)?;
        Ok(FoldResult {
            scores,
            audit: self.audit(kind, training, dev),
            record: TrainingRecord {
                seed: self.seed,
                fold: self.fold.index,
                model: kind,
                epochs: Vec::new(),
                best_epoch: 0,
                best_dev_loss: f64::NAN,
                cached: true,
            },
            bundle,
        })
    }

    fn bcnn1(&self, cache: bool) -> Result<FoldResult> {
        let kind = ModelKind::Bcnn1;
        if cache {
            if let Some(b) = self.cached(kind) {
                return self.from_cache(b);
            }
        }
        let fk = self.manifest.meta.kind;
        let stats = fit_stats(kind, fk, self.manifest, &self.fold.train)?;
        let train_set = segment_samples(self.manifest, &self.fold.train, &stats)?;
        let dev_set = segment_samples(self.manifest, &self.fold.dev, &stats)?;
        let AnyModel::Bcnn1(mut net) =
            init_random(kind, self.manifest.feature_dim(), self.cfg.frames, self.init_seed(kind))?
        else {
            unreachable!("init_random returns the requested kind")
        };
        let outcome = train(&mut net, &train_set, &dev_set, &self.train_config(kind))?;
        let audit = self.audit(kind, self.fold.train.clone(), self.fold.dev.clone());
        self.finish(AnyModel::Bcnn1(net), stats, InitMode::Random, outcome, audit, cache)
    }

    fn pairs(&self) -> Result<(Vec<PairSample>, Vec<PairSample>)> {
        Ok((
            enumerate_pairs(self.manifest, &self.fold.train, &self.references)?,
            enumerate_pairs(self.manifest, &self.fold.dev, &self.references)?,
        ))
    }

    fn bcnn2(&self, cache: bool) -> Result<FoldResult> {
        let kind = ModelKind::Bcnn2;
        if cache {
            if let Some(b) = self.cached(kind) {
                return self.from_cache(b);
            }
        }
        let fk = self.manifest.meta.kind;
        let stats = fit_stats(kind, fk, self.manifest, &self.fold.train)?;
        let (train_pairs, dev_pairs) = self.pairs()?;
        let entries = train_pairs
            .iter()
            .chain(&dev_pairs)
            .flat_map(|p| [p.test, p.reference])
            .collect();
        let inputs = resized_inputs(kind, fk, &stats, self.cfg.frames, self.manifest, &entries)?;
        let train_set = kl_samples(&train_pairs, &inputs)?;
        let dev_set = kl_samples(&dev_pairs, &inputs)?;
        let AnyModel::Bcnn2(mut net) =
            init_random(kind, self.manifest.feature_dim(), self.cfg.frames, self.init_seed(kind))?
        else {
            unreachable!("init_random returns the requested kind")
        };
        let outcome = train(&mut net, &train_set, &dev_set, &self.train_config(kind))?;
        let audit = self.audit(
            kind,
            speakers_of(self.manifest, &train_pairs),
            speakers_of(self.manifest, &dev_pairs),
        );
        self.finish(AnyModel::Bcnn2(net), stats, InitMode::Random, outcome, audit, cache)
    }

    fn proposed(&self, transfer: Option<(&ModelBundle, &ModelBundle)>) -> Result<FoldResult> {
        let kind = ModelKind::Proposed;
        let fk = self.manifest.meta.kind;
        let stats = fit_stats(kind, fk, self.manifest, &self.fold.train)?;
        let (train_pairs, dev_pairs) = self.pairs()?;
        let entries = train_pairs
            .iter()
            .chain(&dev_pairs)
            .flat_map(|p| [p.test, p.reference])
            .collect();
        let inputs = resized_inputs(kind, fk, &stats, self.cfg.frames, self.manifest, &entries)?;
        let train_set = proposed_samples(&train_pairs, &inputs);
        let dev_set = proposed_samples(&dev_pairs, &inputs);
        let AnyModel::Proposed(mut net) =
            init_random(kind, self.manifest.feature_dim(), self.cfg.frames, self.init_seed(kind))?
        else {
            unreachable!("init_random returns the requested kind")
        };
        let init = match transfer {
            Some((b1, b2)) => {
                init_transfer(&mut net, b1, b2)?;
                InitMode::Transfer
            }
            None => InitMode::Random,
        };
        let outcome = train(&mut net, &train_set, &dev_set, &self.train_config(kind))?;
        let audit = self.audit(
            kind,
            speakers_of(self.manifest, &train_pairs),
            speakers_of(self.manifest, &dev_pairs),
        );
        self.finish(AnyModel::Proposed(net), stats, init, outcome, audit, false)
    }

    fn run(&self) -> Result<Vec<FoldResult>> {
        log::info!("seed {} fold {}: training {}", self.seed, self.fold.index, self.cfg.model);
        Ok(match (self.cfg.model, self.cfg.init) {
            (ModelKind::Bcnn1, _) => vec![self.bcnn1(false)?],
            (ModelKind::Bcnn2, _) => vec![self.bcnn2(false)?],
            (ModelKind::Proposed, InitMode::Random) => vec![self.proposed(None)?],
            (ModelKind::Proposed, InitMode::Transfer) => {
                let b1 = self.bcnn1(true)?;
                let b2 = self.bcnn2(true)?;
                let p = self.proposed(Some((&b1.bundle, &b2.bundle)))?;
                vec![p, b1, b2]
            }
        })
    }
}

fn ensure_dirs(out: &Path) -> Result<()> {
    for sub in ["logs", "bundles", "cache"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn job<'a>(manifest: &'a Manifest, cfg: &'a CvConfig, plan: &FoldPlan, seed: u64, fold: usize) -> Job<'a> {
    let fold = plan.fold(fold);
    Job {
        manifest,
        cfg,
        seed,
        references: fold.references(&plan.labels),
        fold,
    }
}

/// Trains the configured model on fold `fold` of `plan` for one seed. With
/// transfer initialisation the two baselines come first in the result, then
/// the proposed model last.
pub fn run_fold(
    manifest: &Manifest,
    cfg: &CvConfig,
    plan: &FoldPlan,
    seed: u64,
    fold: usize,
) -> Result<Vec<FoldResult>> {
    cfg.validate(manifest.meta.kind)?;
    if fold >= plan.k {
        return Err(Error::Config(format!("fold {fold} out of range for {} folds", plan.k)));
    }
    if let Some(out) = &cfg.out_dir {
        ensure_dirs(out)?;
    }
    let mut r = job(manifest, cfg, plan, seed, fold).run()?;
    r.rotate_left(1);
    Ok(r)
}

/// Full stratified cross-validation over every seed.
pub fn run_cv(manifest: &Manifest, cfg: &CvConfig) -> Result<CvOutcome> {
    cfg.validate(manifest.meta.kind)?;
    let plan = make_folds(manifest, cfg.folds, cfg.fold_seed)?;
    if let Some(out) = &cfg.out_dir {
        ensure_dirs(out)?;
    }
    let jobs: Vec<Job> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| (0..plan.k).map(move |f| (seed, f)))
        .map(|(seed, f)| job(manifest, cfg, &plan, seed, f))
        .collect();
    let run = |job: &Job| {
        job.run()
            .map_err(|e| e.context(format!("seed {} fold {}", job.seed, job.fold.index)))
    };
    let results: Vec<Vec<FoldResult>> = if cfg.jobs <= 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };

    let mut scores: BTreeMap<ModelKind, Vec<FoldScores>> = BTreeMap::new();
    let mut audits = Vec::new();
    let mut training = Vec::new();
    for (job, trained) in jobs.iter().zip(results) {
        for t in trained {
            scores.entry(t.bundle.kind).or_default().push(FoldScores {
                seed: job.seed,
                fold: job.fold.index,
                speakers: t.scores,
            });
            audits.push(t.audit);
            training.push(t.record);
        }
    }
    let db = &manifest.meta.database;
    let primary = scores.remove(&cfg.model).expect("the requested model always runs");
    let report = assemble_report(cfg.model, db, &cfg.config_hash, primary)?;
    let baselines = scores
        .into_iter()
        .map(|(kind, s)| assemble_report(kind, db, &cfg.config_hash, s))
        .collect::<Result<_>>()?;
    Ok(CvOutcome {
        plan,
        report,
        baselines,
        audits,
        training,
    })
}
