//! Run configuration: plain `key = value` files layered under command-line
//! overrides, plus the hash recorded in every output.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::FeatureKind;
use crate::error::{Error, Result};
use crate::evaluation::{CvConfig, InitMode};
use crate::models::{DistanceKind, ModelKind, DEFAULT_FRAMES, REFERENCE_FRAMES};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelKind,
    pub frames: usize,
    pub distance: DistanceKind,
    pub init: InitMode,
    pub folds: usize,
    pub fold_seed: u64,
    pub seeds: Vec<u64>,
    pub features: FeatureKind,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelKind::Proposed,
            frames: DEFAULT_FRAMES,
            distance: DistanceKind::Euclidean,
            init: InitMode::Random,
            folds: 5,
            fold_seed: 0,
            seeds: vec![1, 2, 3],
            features: FeatureKind::Ap,
            manifest: None,
            out: None,
            jobs: 1,
        }
    }
}

/// Every key accepted in a config file or via `set`.
pub const CONFIG_KEYS: &[&str] = &[
    "batch_size", "lr0", "lr_factor", "patience", "max_epochs", "lr_min", "dropout", "min_delta",
    "model", "s", "distance", "init", "folds", "fold_seed", "seeds", "seed", "features", "manifest",
    "out", "jobs",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_distance(value: &str) -> Result<DistanceKind> {
    match value.to_ascii_lowercase().as_str() {
        "euclidean" => Ok(DistanceKind::Euclidean),
        "kl" => Ok(DistanceKind::Kl),
        "none" => Ok(DistanceKind::None),
        other => Err(Error::Config(format!("unknown distance `{other}` (euclidean|kl|none)"))),
    }
}

fn distance_name(d: DistanceKind) -> &'static str {
    match d {
        DistanceKind::Euclidean => "euclidean",
        DistanceKind::Kl => "kl",
        DistanceKind::None => "none",
    }
}

/// Parses `1,2,3`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse("seeds", s))
        .collect()
}

impl RunConfig {
    /// Applies one setting. Setting `model` also resets `distance` to that
    /// model's distance.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key.trim().to_ascii_lowercase().as_str() {
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr0" => t.lr0 = parse(key, value)?,
            "lr_factor" => t.lr_factor = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "min_delta" => t.min_delta = parse(key, value)?,
            "model" => {
                self.model = value.parse()?;
                self.distance = self.model.distance();
            }
            "s" | "frames" => self.frames = parse(key, value)?,
            "distance" => self.distance = parse_distance(value)?,
            "init" => self.init = value.parse()?,
            "folds" => self.folds = parse(key, value)?,
            "fold_seed" => self.fold_seed = parse(key, value)?,
            "seeds" | "seed" => self.seeds = parse_seeds(value)?,
            "features" => self.features = value.parse()?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "jobs" => self.jobs = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1))
            })?;
            self.set(key, value)
                .map_err(|e| e.context(format!("config line {}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)
            .map_err(|e| e.context(path.display().to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.distance != self.model.distance() {
            return Err(Error::Config(format!(
                "model {} uses {} distances, not {}",
                self.model,
                distance_name(self.model.distance()),
                distance_name(self.distance)
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.model != ModelKind::Bcnn1 {
            crate::models::classifier_chain(self.frames)?;
            if !REFERENCE_FRAMES.contains(&self.frames) {
                log::warn!(
                    "S = {} leaves the 55..=58 range that yields a 784-wide classifier; fc1 is resized",
                    self.frames
                );
            }
        }
        Ok(())
    }

    /// Settings that influence results, one `key=value` per line in a fixed
    /// order. Output location and worker count are excluded.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let lines = [
            format!("batch_size={}", t.batch_size),
            format!("lr0={:?}", t.lr0),
            format!("lr_factor={:?}", t.lr_factor),
            format!("patience={}", t.patience),
            format!("max_epochs={}", t.max_epochs),
            format!("lr_min={:?}", t.lr_min),
            format!("dropout={:?}", t.dropout),
            format!("min_delta={:?}", t.min_delta),
            format!("model={}", self.model),
            format!("s={}", self.frames),
            format!("distance={}", distance_name(self.distance)),
            format!("init={}", self.init),
            format!("folds={}", self.folds),
            format!("fold_seed={}", self.fold_seed),
            format!("seeds={}", seeds.join(",")),
            format!("features={}", self.features),
            format!(
                "manifest={}",
                self.manifest.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            model: self.model,
            init: self.init,
            frames: self.frames,
            folds: self.folds,
            fold_seed: self.fold_seed,
            seeds: self.seeds.clone(),
            train: self.train.clone(),
            jobs: self.jobs,
            config_hash: self.hash(),
            out_dir: self.out.clone(),
        }
    }
}
