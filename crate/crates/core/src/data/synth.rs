//! Synthetic articulatory-posterior corpora.
//!
//! Each item is a smooth trajectory through a handful of phone-like targets
//! in logit space; frames are mapped to posteriors with a softmax per
//! articulatory block. Dysarthric speakers get slower, irregular timing,
//! temporal smoothing (undershoot) and flatter posteriors, all scaled by a
//! per-speaker severity. With `severity = 0` both classes come from the
//! same distribution.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::features::FeatureMatrix;
use super::manifest::{FeatureKind, Label, Manifest, ManifestMeta, UtteranceRecord};
use crate::error::{Error, Result};

/// Sizes of the manner / place / height / vowel posterior blocks.
pub const AP_BLOCKS: [usize; 4] = [11, 14, 8, 20];
/// Total AP feature count.
pub const AP_FEATURES: usize = 53;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub healthy: usize,
    pub dysarthric: usize,
    pub items: usize,
    /// Range of each item's base length. Speaking rate, timing jitter and
    /// dysarthric slowing stretch individual utterances beyond it (clamped
    /// to 16..=4·max_frames).
    pub min_frames: usize,
    pub max_frames: usize,
    /// 0 disables every dysarthric effect; 1 is the default strength.
    pub severity: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            healthy: 20,
            dysarthric: 20,
            items: 10,
            min_frames: 40,
            max_frames: 90,
            severity: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.healthy < 2 || self.dysarthric < 2 {
            return Err(Error::Config("synthetic corpus needs ≥ 2 speakers per class".into()));
        }
        if self.items < 2 {
            return Err(Error::Config("synthetic corpus needs ≥ 2 items".into()));
        }
        if self.min_frames < 16 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "frame range {}..={} invalid (minimum 16)",
                self.min_frames, self.max_frames
            )));
        }
        if !(0.0..=5.0).contains(&self.severity) {
            return Err(Error::Config(format!("severity {} outside [0, 5]", self.severity)));
        }
        Ok(())
    }
}

/// Deterministic sub-seed for `(seed, stream, a, b)`.
pub(crate) fn subseed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [stream, a, b] {
        x = x.wrapping_add(v.wrapping_mul(0xBF58_476D_1CE4_E5B9)).rotate_left(27);
        x ^= x >> 31;
        x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    x
}

struct ItemPrototype {
    centers: Vec<f64>,
    widths: Vec<f64>,
    targets: Vec<[f64; AP_FEATURES]>,
    base_frames: f64,
}

impl ItemPrototype {
    fn sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let n_seg = rng.random_range(4..=7);
        let raw: Vec<f64> = (0..n_seg).map(|_| rng.random_range(0.6..1.4)).collect();
        let total: f64 = raw.iter().sum();
        let mut centers = Vec::with_capacity(n_seg);
        let mut acc = 0.0;
        for d in &raw {
            centers.push((acc + d / 2.0) / total);
            acc += d;
        }
        let widths = raw.iter().map(|d| 0.55 * d / total).collect();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let targets = (0..n_seg)
            .map(|_| {
                let mut z = [0.0; AP_FEATURES];
                let mut off = 0;
                for &size in &AP_BLOCKS {
                    for v in &mut z[off..off + size] {
                        *v = noise.sample(rng);
                    }
                    let dominant = rng.random_range(0..size);
                    z[off + dominant] += rng.random_range(3.0..5.0);
                    off += size;
                }
                z
            })
            .collect();
        let base_frames = rng.random_range(cfg.min_frames as f64..=cfg.max_frames as f64);
        ItemPrototype {
            centers,
            widths,
            targets,
            base_frames,
        }
    }

    /// Target logits at canonical time `u ∈ [0, 1]`.
    fn logits_at(&self, u: f64) -> [f64; AP_FEATURES] {
        let weights: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, w)| (-((u - c) / w).powi(4)).exp() + 1e-12)
            .collect();
        let total: f64 = weights.iter().sum();
        let mut z = [0.0; AP_FEATURES];
        for (w, t) in weights.iter().zip(&self.targets) {
            for (zv, tv) in z.iter_mut().zip(t) {
                *zv += w / total * tv;
            }
        }
        z
    }
}

struct SpeakerTraits {
    id: String,
    label: Label,
    rate: f64,
    gain: f64,
    offset: [f64; AP_FEATURES],
    severity: f64,
}

fn speaker_traits(cfg: &SynthConfig, index: usize, label: Label) -> SpeakerTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, 1, index as u64, 0));
    let bias = Normal::new(0.0, 0.25).unwrap();
    let mut offset = [0.0; AP_FEATURES];
    offset.iter_mut().for_each(|v| *v = bias.sample(&mut rng));
    let rate = rng.random_range(0.9..1.1);
    let gain = rng.random_range(0.9..1.1);
    let spread: f64 = rng.random_range(0.6..1.4);
    let (id, severity) = match label {
        Label::Healthy => (format!("H{:03}", index + 1), 0.0),
        Label::Dysarthric => (
            format!("D{:03}", index + 1 - cfg.healthy),
            cfg.severity as f64 * spread,
        ),
    };
    SpeakerTraits {
        id,
        label,
        rate,
        gain,
        offset,
        severity,
    }
}

/// Monotone map from frame index to canonical time, with `sigma` controlling
/// how irregular the local speaking rate is.
fn time_map(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let raw: Vec<f64> = (0..n + 4).map(|_| normal.sample(rng)).collect();
    // 5-tap moving average keeps the rate changes smooth; scale back to unit variance.
    let smooth: Vec<f64> = (0..n)
        .map(|k| raw[k..k + 5].iter().sum::<f64>() / 5f64.sqrt())
        .collect();
    let mut u = Vec::with_capacity(n);
    let mut acc = 0.0;
    for s in &smooth {
        u.push(acc);
        acc += (sigma * s).exp();
    }
    let last = *u.last().unwrap();
    if last > 0.0 {
        u.iter_mut().for_each(|v| *v /= last);
    }
    u
}

fn moving_average(frames: &[[f64; AP_FEATURES]], half: usize) -> Vec<[f64; AP_FEATURES]> {
    let n = frames.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            let mut z = [0.0; AP_FEATURES];
            for f in &frames[lo..=hi] {
                for (a, b) in z.iter_mut().zip(f) {
                    *a += b;
                }
            }
            let count = (hi - lo + 1) as f64;
            z.iter_mut().for_each(|v| *v /= count);
            z
        })
        .collect()
}

fn posteriors(z: &[f64; AP_FEATURES]) -> [f64; AP_FEATURES] {
    let mut p = [0.0; AP_FEATURES];
    let mut off = 0;
    for &size in &AP_BLOCKS {
        let block = &z[off..off + size];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = block.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            p[off + k] = e / total;
        }
        off += size;
    }
    p
}

fn utterance(
    cfg: &SynthConfig,
    proto: &ItemPrototype,
    spk: &SpeakerTraits,
    speaker_index: usize,
    item_index: usize,
) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(
        cfg.seed,
        2,
        speaker_index as u64,
        item_index as u64,
    ));
    let sev = spk.severity;
    let jitter: f64 = rng.random_range(0.95..1.05);
    let n = (proto.base_frames * spk.rate * jitter * (1.0 + 0.35 * sev)).round() as usize;
    let n = n.clamp(16, 4 * cfg.max_frames);

    let u = time_map(&mut rng, n, 0.15 + 0.9 * sev);
    let noise = Normal::new(0.0, 0.35).unwrap();
    let mut z: Vec<[f64; AP_FEATURES]> = u
        .iter()
        .map(|&t| {
            let mut z = proto.logits_at(t);
            for (v, o) in z.iter_mut().zip(&spk.offset) {
                *v = spk.gain * *v + o + noise.sample(&mut rng);
            }
            z
        })
        .collect();
    let half = (3.0 * sev).round() as usize;
    if half > 0 {
        z = moving_average(&z, half);
    }
    let temperature = 1.0 + 0.7 * sev;
    let cols: Vec<Vec<f32>> = z
        .iter()
        .map(|frame| {
            let mut scaled = *frame;
            scaled.iter_mut().for_each(|v| *v /= temperature);
            posteriors(&scaled).iter().map(|&p| p as f32).collect()
        })
        .collect();
    FeatureMatrix::from_frames(AP_FEATURES, &cols).expect("consistent frame sizes")
}

/// Generates a labelled AP corpus in memory. Paths are
/// `features/<speaker>/<item>.pdn`, relative to wherever it is written.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Manifest> {
    cfg.validate()?;
    let protos: Vec<ItemPrototype> = (0..cfg.items)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, 0, i as u64, 0));
            ItemPrototype::sample(&mut rng, cfg)
        })
        .collect();
    let total = cfg.healthy + cfg.dysarthric;
    let mut entries = Vec::with_capacity(total * cfg.items);
    for s in 0..total {
        let label = if s < cfg.healthy {
            Label::Healthy
        } else {
            Label::Dysarthric
        };
        let spk = speaker_traits(cfg, s, label);
        for (i, proto) in protos.iter().enumerate() {
            let item_id = format!("w{:02}", i + 1);
            entries.push(UtteranceRecord {
                speaker_id: spk.id.clone(),
                label: spk.label,
                path: PathBuf::from(format!("features/{}/{item_id}.pdn", spk.id)),
                item_id,
                features: utterance(cfg, proto, &spk, s, i),
            });
        }
    }
    Manifest::new(
        ManifestMeta {
            database: "synthetic".into(),
            frame_ms: 10.0,
            kind: FeatureKind::Ap,
        },
        entries,
    )
}
