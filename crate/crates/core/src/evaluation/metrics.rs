use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Speakers scoring strictly above this are called dysarthric.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Mean dysarthric-class probability over a speaker's predictions.
pub fn soft_vote(speaker: &str, predictions: &[[f64; 2]]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Evaluation(format!(
            "speaker {speaker} has no predictions to vote over"
        )));
    }
    let sum: f64 = predictions.iter().map(|p| p[1]).sum();
    Ok(sum / predictions.len() as f64)
}

fn split_classes(scores: &[(f64, Label)]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {s}")));
    }
    let healthy: Vec<f64> = scores
        .iter()
        .filter(|(_, l)| *l == Label::Healthy)
        .map(|(s, _)| *s)
        .collect();
    let dys: Vec<f64> = scores
        .iter()
        .filter(|(_, l)| *l == Label::Dysarthric)
        .map(|(s, _)| *s)
        .collect();
    if healthy.is_empty() || dys.is_empty() {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes ({} healthy, {} dysarthric)",
            healthy.len(),
            dys.len()
        )));
    }
    Ok((healthy, dys))
}

/// Integer Mann-Whitney counts: (dysarthric > healthy, ties) over all
/// cross-class pairs, plus the class sizes.
pub fn mann_whitney_counts(scores: &[(f64, Label)]) -> Result<(u64, u64, usize, usize)> {
    let (mut healthy, dys) = split_classes(scores)?;
    healthy.sort_by(|a, b| a.total_cmp(b));
    let mut greater = 0u64;
    let mut ties = 0u64;
    for d in &dys {
        let below = healthy.partition_point(|h| h < d);
        let not_above = healthy.partition_point(|h| h <= d);
        greater += below as u64;
        ties += (not_above - below) as u64;
    }
    Ok((greater, ties, healthy.len(), dys.len()))
}

/// Area under the ROC curve, with ties counted as one half.
pub fn roc_auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (greater, ties, nh, nd) = mann_whitney_counts(scores)?;
    Ok((greater as f64 + 0.5 * ties as f64) / (nh as f64 * nd as f64))
}

/// Percentage of speakers classified correctly at `threshold` (strictly
/// greater means dysarthric).
pub fn accuracy(scores: &[(f64, Label)], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .filter(|(s, l)| (*s > threshold) == (*l == Label::Dysarthric))
        .count();
    100.0 * correct as f64 / scores.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Speakers with score >= threshold are called dysarthric.
    pub threshold: f64,
}

/// ROC operating points from (0,0) to (1,1), one per distinct score in
/// descending order. The first point has an infinite threshold.
pub fn roc_points(scores: &[(f64, Label)]) -> Result<Vec<RocPoint>> {
    let (healthy, dys) = split_classes(scores)?;
    let (nh, nd) = (healthy.len() as f64, dys.len() as f64);
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                Label::Healthy => fp += 1,
                Label::Dysarthric => tp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / nh,
            tpr: tp as f64 / nd,
            threshold: t,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a sequence of ROC points.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
