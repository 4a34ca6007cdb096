use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::soft_vote;
use crate::autodiff::Tensor;
use crate::data::{
    log_transform, resize_representation, segment, zscore_apply, zscore_fit, FeatureKind,
    FeatureMatrix, Label, Manifest, ZScoreStats, LOG_FLOOR,
};
use crate::error::{Error, Result};
use crate::models::{AnyModel, BCnn2Net, ModelBundle, ModelKind, Network, PairInput};
use crate::training::{enumerate_pairs, PairSample, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerScore {
    pub speaker_id: String,
    pub label: Label,
    /// Mean dysarthric-class probability.
    pub score: f64,
    pub n_votes: usize,
}

/// The representation a model of `kind` consumes before normalisation:
/// B-CNN1 takes log posteriors when the corpus holds AP features.
pub fn model_view(kind: ModelKind, features: FeatureKind, rep: &FeatureMatrix) -> Result<FeatureMatrix> {
    match (kind, features) {
        (ModelKind::Bcnn1, FeatureKind::Ap) => log_transform(rep, LOG_FLOOR),
        _ => Ok(rep.clone()),
    }
}

/// Z-score statistics over every utterance of `speakers`. B-CNN2 compares
/// raw posteriors and gets identity statistics.
pub fn fit_stats(
    kind: ModelKind,
    features: FeatureKind,
    manifest: &Manifest,
    speakers: &BTreeSet<String>,
) -> Result<ZScoreStats> {
    if kind == ModelKind::Bcnn2 {
        return Ok(ZScoreStats::identity(manifest.feature_dim()));
    }
    let views: Vec<FeatureMatrix> = manifest
        .entries
        .iter()
        .filter(|e| speakers.contains(&e.speaker_id))
        .map(|e| model_view(kind, features, &e.features))
        .collect::<Result<_>>()?;
    let fit = zscore_fit(views.iter())?;
    if !fit.floored.is_empty() {
        log::warn!(
            "{} constant feature(s) had their spread floored: {:?}",
            fit.floored.len(),
            fit.floored
        );
    }
    Ok(fit.stats)
}

/// Normalised then resized `F×S` input of one utterance. B-CNN2 bundles
/// carry identity statistics, so their inputs stay raw.
pub fn resized_input(
    kind: ModelKind,
    features: FeatureKind,
    stats: &ZScoreStats,
    frames: usize,
    rep: &FeatureMatrix,
) -> Result<Arc<Tensor>> {
    let view = model_view(kind, features, rep)?;
    let normed = zscore_apply(&view, stats)?;
    Ok(Arc::new(resize_representation(&normed, frames)?.into_tensor()))
}

/// Resized inputs for every manifest entry whose index is in `entries`.
pub fn resized_inputs(
    kind: ModelKind,
    features: FeatureKind,
    stats: &ZScoreStats,
    frames: usize,
    manifest: &Manifest,
    entries: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, Arc<Tensor>>> {
    entries
        .par_iter()
        .map(|&i| {
            resized_input(kind, features, stats, frames, &manifest.entries[i].features)
                .map(|t| (i, t))
        })
        .collect()
}

fn pair_entries(pairs: &[PairSample]) -> BTreeSet<usize> {
    pairs.iter().flat_map(|p| [p.test, p.reference]).collect()
}

/// Pair samples for the proposed network.
pub fn proposed_samples(
    pairs: &[PairSample],
    inputs: &BTreeMap<usize, Arc<Tensor>>,
) -> Vec<Sample<PairInput>> {
    pairs
        .iter()
        .map(|p| Sample {
            input: PairInput::new(inputs[&p.test].clone(), inputs[&p.reference].clone()),
            label: p.label,
        })
        .collect()
}

/// Precomputed KL distance images for B-CNN2.
pub fn kl_samples(
    pairs: &[PairSample],
    inputs: &BTreeMap<usize, Arc<Tensor>>,
) -> Result<Vec<Sample<Tensor>>> {
    pairs
        .par_iter()
        .map(|p| {
            let pair = PairInput::new(inputs[&p.test].clone(), inputs[&p.reference].clone());
            Ok(Sample {
                input: BCnn2Net::distance_image(&pair)?,
                label: p.label,
            })
        })
        .collect()
}

/// Normalised 16-frame segments of one utterance.
pub fn utterance_segments(
    features: FeatureKind,
    stats: &ZScoreStats,
    rep: &FeatureMatrix,
) -> Result<Vec<Tensor>> {
    let view = model_view(ModelKind::Bcnn1, features, rep)?;
    let normed = zscore_apply(&view, stats)?;
    Ok(segment(&normed).into_iter().map(FeatureMatrix::into_tensor).collect())
}

/// Segment samples for every utterance of `speakers`, in manifest order.
pub fn segment_samples(
    manifest: &Manifest,
    speakers: &BTreeSet<String>,
    stats: &ZScoreStats,
) -> Result<Vec<Sample<Tensor>>> {
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| speakers.contains(&e.speaker_id)) {
        for seg in utterance_segments(manifest.meta.kind, stats, &e.features)? {
            out.push(Sample {
                input: seg,
                label: e.label,
            });
        }
    }
    Ok(out)
}

/// Per-pair probabilities from a trained pair model, in `pairs` order.
pub fn pair_predictions(
    bundle: &ModelBundle,
    manifest: &Manifest,
    pairs: &[PairSample],
) -> Result<Vec<[f64; 2]>> {
    let model = AnyModel::from_bundle(bundle)?;
    let inputs = resized_inputs(
        bundle.kind,
        manifest.meta.kind,
        &bundle.zscore,
        bundle.frames,
        manifest,
        &pair_entries(pairs),
    )?;
    pairs
        .par_iter()
        .map(|p| {
            let pair = PairInput::new(inputs[&p.test].clone(), inputs[&p.reference].clone());
            match &model {
                AnyModel::Proposed(m) => m.predict(&pair),
                AnyModel::Bcnn2(m) => m.predict_pair(&pair),
                AnyModel::Bcnn1(_) => Err(Error::Usage("B-CNN1 scores segments, not pairs".into())),
            }
        })
        .collect()
}

/// Per-segment probabilities over all utterances of `speaker`.
pub fn segment_predictions(bundle: &ModelBundle, manifest: &Manifest, speaker: &str) -> Result<Vec<[f64; 2]>> {
    let AnyModel::Bcnn1(model) = AnyModel::from_bundle(bundle)? else {
        return Err(Error::Usage(format!("{} bundle cannot score segments", bundle.kind)));
    };
    let mut segments = Vec::new();
    for i in manifest.utterances_of(speaker) {
        segments.extend(utterance_segments(
            manifest.meta.kind,
            &bundle.zscore,
            &manifest.entries[i].features,
        )?);
    }
    segments.par_iter().map(|s| model.predict(s)).collect()
}

/// Soft-voted scores for each test speaker: over matched pairs against
/// `references` for the pair models, over segments for B-CNN1.
pub fn score_speakers(
    bundle: &ModelBundle,
    manifest: &Manifest,
    test_speakers: &BTreeSet<String>,
    references: &BTreeSet<String>,
) -> Result<Vec<SpeakerScore>> {
    let labels = manifest.speakers();
    let mut votes: BTreeMap<&str, Vec<[f64; 2]>> =
        test_speakers.iter().map(|s| (s.as_str(), Vec::new())).collect();
    if bundle.kind == ModelKind::Bcnn1 {
        for s in test_speakers {
            let p = segment_predictions(bundle, manifest, s)?;
            votes.insert(s.as_str(), p);
        }
    } else {
        let pairs = enumerate_pairs(manifest, test_speakers, references)?;
        let preds = pair_predictions(bundle, manifest, &pairs)?;
        for (p, pr) in pairs.iter().zip(preds) {
            let speaker = manifest.entries[p.test].speaker_id.as_str();
            votes.get_mut(speaker).expect("test speaker").push(pr);
        }
    }
    votes
        .into_iter()
        .map(|(speaker, preds)| {
            let label = *labels
                .get(speaker)
                .ok_or_else(|| Error::Evaluation(format!("speaker {speaker} not in manifest")))?;
            Ok(SpeakerScore {
                speaker_id: speaker.to_string(),
                label,
                score: soft_vote(speaker, &preds)?,
                n_votes: preds.len(),
            })
        })
        .collect()
}
