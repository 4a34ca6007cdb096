use rand_chacha::ChaCha8Rng;

use super::{ModelKind, Network, DROPOUT};
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::data::SEGMENT_FRAMES;
use crate::error::{Error, Result};

const CONV1_CHANNELS: usize = 32;
const CONV2_CHANNELS: usize = 16;
const CONV2_WIDTH: usize = 4;
const FC_HIDDEN: usize = 128;

/// Flatten extent after the two convolutions: `16 · (16 − 4 + 1)`.
pub const BCNN1_FLATTEN: usize = CONV2_CHANNELS * (SEGMENT_FRAMES - CONV2_WIDTH + 1);

pub(crate) fn bcnn1_shapes(features: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("conv1.weight", vec![CONV1_CHANNELS, 1, features, 1]),
        ("conv1.bias", vec![CONV1_CHANNELS]),
        ("conv2.weight", vec![CONV2_CHANNELS, CONV1_CHANNELS, 1, CONV2_WIDTH]),
        ("conv2.bias", vec![CONV2_CHANNELS]),
        ("fc1.weight", vec![FC_HIDDEN, BCNN1_FLATTEN]),
        ("fc1.bias", vec![FC_HIDDEN]),
        ("fc2.weight", vec![2, FC_HIDDEN]),
        ("fc2.bias", vec![2]),
    ]
}

/// Segment-level CNN on `F×16` windows of (log-)features.
#[derive(Clone, Debug)]
pub struct BCnn1Net {
    params: ParamSet,
    features: usize,
    pub dropout: f32,
}

impl BCnn1Net {
    pub fn from_params(params: ParamSet, features: usize) -> Result<Self> {
        super::init::check_shapes(&params, &bcnn1_shapes(features))?;
        Ok(BCnn1Net {
            params,
            features,
            dropout: DROPOUT,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Per-segment probabilities for a stack of segments.
    pub fn predict_batch(&self, segments: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        segments.iter().map(|s| self.predict(s)).collect()
    }
}

impl Network for BCnn1Net {
    /// One `F×16` segment.
    type Input = Tensor;

    fn kind(&self) -> ModelKind {
        ModelKind::Bcnn1
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn set_dropout(&mut self, p: f32) {
        self.dropout = p;
    }

    fn logits<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        segment: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if segment.shape() != [self.features, SEGMENT_FRAMES] {
            return Err(Error::dim(
                "forward_bcnn1",
                format!(
                    "segment {:?}, expected [{}, {SEGMENT_FRAMES}]",
                    segment.shape(),
                    self.features
                ),
            ));
        }
        let x = tape.constant(segment.reshaped(vec![1, self.features, SEGMENT_FRAMES])?);
        let (w, b) = (tape.param_named("conv1.weight")?, tape.param_named("conv1.bias")?);
        let x = tape.conv2d(x, w, b, 1)?;
        let x = tape.relu(x);
        let (w, b) = (tape.param_named("conv2.weight")?, tape.param_named("conv2.bias")?);
        let x = tape.conv2d(x, w, b, 1)?;
        let x = tape.relu(x);
        let x = tape.dropout(x, self.dropout, training, rng)?;
        let x = tape.flatten(x)?;
        let (w, b) = (tape.param_named("fc1.weight")?, tape.param_named("fc1.bias")?);
        let x = tape.affine(x, w, b)?;
        let x = tape.relu(x);
        let (w, b) = (tape.param_named("fc2.weight")?, tape.param_named("fc2.bias")?);
        tape.affine(x, w, b)
    }
}
