use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Lengths `S` for which the classifier ends on a 7×7 map (flatten 784).
pub const REFERENCE_FRAMES: std::ops::RangeInclusive<usize> = 55..=58;

pub(crate) const CONV_KERNEL: usize = 10;
pub(crate) const CONV_CHANNELS: usize = 16;
pub(crate) const FC_HIDDEN: usize = 128;

/// Spatial extents through conv10 → pool2 → conv10 → pool2 for an `S×S` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierChain {
    pub input: usize,
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub flatten: usize,
}

/// Derives the classifier dimension chain for `S×S` distance images.
/// Lengths outside [`REFERENCE_FRAMES`] are accepted with a warning; lengths too
/// short for the chain are rejected.
pub fn classifier_chain(frames: usize) -> Result<ClassifierChain> {
    let too_short = || {
        Error::Config(format!(
            "S = {frames} is too short for two 10×10 convolutions with 2×2 pooling (need ≥ 31)"
        ))
    };
    let conv1 = frames.checked_sub(CONV_KERNEL - 1).filter(|&v| v >= 2).ok_or_else(too_short)?;
    let pool1 = conv1 / 2;
    let conv2 = pool1.checked_sub(CONV_KERNEL - 1).filter(|&v| v >= 2).ok_or_else(too_short)?;
    let pool2 = conv2 / 2;
    if !REFERENCE_FRAMES.contains(&frames) {
        log::warn!(
            "S = {frames}: classifier flatten re-derived as {} (the reference architecture uses 784)",
            CONV_CHANNELS * pool2 * pool2
        );
    }
    Ok(ClassifierChain {
        input: frames,
        conv1,
        pool1,
        conv2,
        pool2,
        flatten: CONV_CHANNELS * pool2 * pool2,
    })
}

/// Parameter shapes of the distance-image classifier for a given chain.
pub(crate) fn classifier_shapes(chain: &ClassifierChain) -> Vec<(&'static str, Vec<usize>)> {
    let k = CONV_KERNEL;
    vec![
        ("conv1.weight", vec![CONV_CHANNELS, 1, k, k]),
        ("conv1.bias", vec![CONV_CHANNELS]),
        ("conv2.weight", vec![CONV_CHANNELS, CONV_CHANNELS, k, k]),
        ("conv2.bias", vec![CONV_CHANNELS]),
        ("fc1.weight", vec![FC_HIDDEN, chain.flatten]),
        ("fc1.bias", vec![FC_HIDDEN]),
        ("fc2.weight", vec![2, FC_HIDDEN]),
        ("fc2.bias", vec![2]),
    ]
}

/// Classifier on a `1×S×S` image node; returns the logits.
pub(crate) fn classifier_logits<'p>(
    tape: &mut Tape<'p>,
    image: Var,
    dropout: f32,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let (w, b) = (tape.param_named("conv1.weight")?, tape.param_named("conv1.bias")?);
    let x = tape.conv2d(image, w, b, 1)?;
    let x = tape.relu(x);
    let x = tape.maxpool2d(x)?;
    let (w, b) = (tape.param_named("conv2.weight")?, tape.param_named("conv2.bias")?);
    let x = tape.conv2d(x, w, b, 1)?;
    let x = tape.relu(x);
    let x = tape.maxpool2d(x)?;
    let x = tape.dropout(x, dropout, training, rng)?;
    let x = tape.flatten(x)?;
    let (w, b) = (tape.param_named("fc1.weight")?, tape.param_named("fc1.bias")?);
    let x = tape.affine(x, w, b)?;
    let x = tape.relu(x);
    let (w, b) = (tape.param_named("fc2.weight")?, tape.param_named("fc2.bias")?);
    tape.affine(x, w, b)
}
