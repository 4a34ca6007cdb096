use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

/// Smallest standard deviation used when normalising.
pub const STD_FLOOR: f32 = 1e-8;

/// Per-feature mean and standard deviation over training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ZScoreStats {
    /// Identity statistics (mean 0, std 1) for `f` features.
    pub fn identity(f: usize) -> Self {
        ZScoreStats {
            mean: vec![0.0; f],
            std: vec![1.0; f],
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }
}

/// Result of [`zscore_fit`]: the statistics plus indices of features whose
/// spread had to be floored.
#[derive(Clone, Debug)]
pub struct ZScoreFit {
    pub stats: ZScoreStats,
    pub floored: Vec<usize>,
}

/// Pools every frame of `reps` and computes per-feature mean / population
/// standard deviation in `f64`.
pub fn zscore_fit<'a, I>(reps: I) -> Result<ZScoreFit>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut frames = 0usize;
    let mut reps_seen = Vec::new();
    for rep in reps {
        let f = rep.features();
        if sum.is_empty() {
            sum = vec![0.0; f];
            sum_sq = vec![0.0; f];
        } else if sum.len() != f {
            return Err(Error::dim(
                "zscore_fit",
                format!("{} features vs {f}", sum.len()),
            ));
        }
        let n = rep.frames();
        for (k, row) in rep.data().chunks_exact(n).enumerate() {
            sum[k] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
        frames += n;
        reps_seen.push(rep);
    }
    if frames < 2 {
        return Err(Error::Input(format!(
            "z-score fit needs at least 2 frames, got {frames}"
        )));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / frames as f64).collect();
    // Second pass on centred values for accuracy.
    for rep in &reps_seen {
        let n = rep.frames();
        for (k, row) in rep.data().chunks_exact(n).enumerate() {
            sum_sq[k] += row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean[k];
                    d * d
                })
                .sum::<f64>();
        }
    }
    let mut floored = Vec::new();
    let std = sum_sq
        .iter()
        .enumerate()
        .map(|(k, ss)| {
            let s = (ss / frames as f64).sqrt() as f32;
            if s < STD_FLOOR {
                floored.push(k);
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    if !floored.is_empty() {
        log::warn!("z-score: {} constant feature(s) floored: {floored:?}", floored.len());
    }
    Ok(ZScoreFit {
        stats: ZScoreStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        },
        floored,
    })
}

pub fn zscore_apply(rep: &FeatureMatrix, stats: &ZScoreStats) -> Result<FeatureMatrix> {
    if rep.features() != stats.features() {
        return Err(Error::dim(
            "zscore_apply",
            format!("{} features vs stats for {}", rep.features(), stats.features()),
        ));
    }
    let n = rep.frames();
    let mut out = rep.clone();
    for (k, row) in out.data_mut().chunks_exact_mut(n).enumerate() {
        let (m, s) = (stats.mean[k], stats.std[k]);
        row.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(out)
}
