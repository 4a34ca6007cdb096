use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bcnn1::bcnn1_shapes;
use super::classifier::{classifier_chain, classifier_shapes};
use super::proposed::proposed_shapes;
use super::{AnyModel, BCnn1Net, BCnn2Net, ModelBundle, ModelKind, ProposedNet};
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Half-width of the uniform initialisation range, `sqrt(1/fan_in)`.
pub fn uniform_bound(fan_in: usize) -> f32 {
    (1.0 / fan_in as f64).sqrt() as f32
}

pub(crate) fn check_shapes(params: &ParamSet, shapes: &[(&str, Vec<usize>)]) -> Result<()> {
    if params.len() != shapes.len() {
        return Err(Error::Config(format!(
            "expected {} parameters, found {}",
            shapes.len(),
            params.len()
        )));
    }
    for (name, shape) in shapes {
        let p = params
            .by_name(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        if p.value.shape() != shape.as_slice() {
            return Err(Error::Config(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                p.value.shape()
            )));
        }
    }
    Ok(())
}

fn random_params(shapes: &[(&'static str, Vec<usize>)], seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (name, shape) in shapes {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(shape.clone())
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let b = uniform_bound(fan_in);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-b..b)).collect();
            Tensor::new(shape.clone(), data)?
        };
        params.add(*name, tensor)?;
    }
    Ok(params)
}

/// Fresh parameters: weights `~ U(-b, b)` with `b = sqrt(1/fan_in)`, zero
/// biases. `features` is the input feature count (F1 for the proposed
/// model, F for B-CNN1, the posterior count for B-CNN2); `frames` is S.
pub fn init_random(kind: ModelKind, features: usize, frames: usize, seed: u64) -> Result<AnyModel> {
    Ok(match kind {
        ModelKind::Proposed => {
            let chain = classifier_chain(frames)?;
            let params = random_params(&proposed_shapes(features, &chain), seed)?;
            AnyModel::Proposed(ProposedNet::from_params(params, features, frames)?)
        }
        ModelKind::Bcnn2 => {
            let chain = classifier_chain(frames)?;
            let params = random_params(&classifier_shapes(&chain), seed)?;
            AnyModel::Bcnn2(BCnn2Net::from_params(params, features, frames)?)
        }
        ModelKind::Bcnn1 => {
            let params = random_params(&bcnn1_shapes(features), seed)?;
            AnyModel::Bcnn1(BCnn1Net::from_params(params, features)?)
        }
    })
}

fn copy_param(dst: &mut ParamSet, dst_name: &str, src: &ParamSet, src_name: &str) -> Result<()> {
    let value = src
        .by_name(src_name)
        .ok_or_else(|| Error::Config(format!("transfer source lacks `{src_name}`")))?
        .value
        .clone();
    let target = dst
        .by_name_mut(dst_name)
        .ok_or_else(|| Error::Config(format!("transfer target lacks `{dst_name}`")))?;
    if target.value.shape() != value.shape() {
        return Err(Error::Config(format!(
            "transfer {src_name} → {dst_name}: shape {:?} vs {:?}",
            value.shape(),
            target.value.shape()
        )));
    }
    target.value = value;
    Ok(())
}

/// Seeds the proposed network from trained baselines: the front-end from
/// B-CNN1's first convolution, the classifier from B-CNN2.
pub fn init_transfer(
    proposed: &mut ProposedNet,
    bcnn1: &ModelBundle,
    bcnn2: &ModelBundle,
) -> Result<()> {
    if bcnn1.kind != ModelKind::Bcnn1 || bcnn2.kind != ModelKind::Bcnn2 {
        return Err(Error::Config(format!(
            "transfer needs (bcnn1, bcnn2) bundles, got ({}, {})",
            bcnn1.kind, bcnn2.kind
        )));
    }
    if bcnn1.features != proposed.features() {
        return Err(Error::Config(format!(
            "B-CNN1 was trained on {} features but the front-end expects {}",
            bcnn1.features,
            proposed.features()
        )));
    }
    if bcnn2.frames != proposed.frames() {
        return Err(Error::Config(format!(
            "B-CNN2 classifier built for S = {} but the model uses S = {}",
            bcnn2.frames,
            proposed.frames()
        )));
    }
    let params = {
        use super::Network;
        proposed.params_mut()
    };
    copy_param(params, "frontend.weight", &bcnn1.params, "conv1.weight")?;
    copy_param(params, "frontend.bias", &bcnn1.params, "conv1.bias")?;
    for layer in ["conv1", "conv2", "fc1", "fc2"] {
        for part in ["weight", "bias"] {
            let name = format!("{layer}.{part}");
            copy_param(params, &name, &bcnn2.params, &name)?;
        }
    }
    Ok(())
}
