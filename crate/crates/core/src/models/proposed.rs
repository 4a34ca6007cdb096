use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::classifier::{classifier_chain, classifier_logits, classifier_shapes, ClassifierChain};
use super::{ModelKind, Network, DROPOUT};
use crate::autodiff::{ParamSet, Tape, Tensor, Var, EUCLIDEAN_EPS};
use crate::error::{Error, Result};

/// Output channels of the shared front-end convolution.
pub const FRONTEND_CHANNELS: usize = 32;

/// A test/reference pair of resized `F×S` representations.
#[derive(Clone, Debug)]
pub struct PairInput {
    pub test: Arc<Tensor>,
    pub reference: Arc<Tensor>,
}

impl PairInput {
    pub fn new(test: Arc<Tensor>, reference: Arc<Tensor>) -> Self {
        PairInput { test, reference }
    }
}

/// Front-end (shared `F1×1` conv, 32 channels) → Euclidean distance image →
/// CNN classifier, trained end to end.
#[derive(Clone, Debug)]
pub struct ProposedNet {
    params: ParamSet,
    features: usize,
    frames: usize,
    chain: ClassifierChain,
    pub dropout: f32,
}

pub(crate) fn proposed_shapes(features: usize, chain: &ClassifierChain) -> Vec<(&'static str, Vec<usize>)> {
    let mut shapes = vec![
        ("frontend.weight", vec![FRONTEND_CHANNELS, 1, features, 1]),
        ("frontend.bias", vec![FRONTEND_CHANNELS]),
    ];
    shapes.extend(classifier_shapes(chain));
    shapes
}

impl ProposedNet {
    /// Wraps existing parameters after checking every expected shape.
    pub fn from_params(params: ParamSet, features: usize, frames: usize) -> Result<Self> {
        let chain = classifier_chain(frames)?;
        super::init::check_shapes(&params, &proposed_shapes(features, &chain))?;
        Ok(ProposedNet {
            params,
            features,
            frames,
            chain,
            dropout: DROPOUT,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn chain(&self) -> &ClassifierChain {
        &self.chain
    }

    fn check_input(&self, input: &PairInput) -> Result<()> {
        let want = [self.features, self.frames];
        if input.test.shape() != want || input.reference.shape() != want {
            return Err(Error::dim(
                "forward_proposed",
                format!(
                    "test {:?} / reference {:?}, expected {want:?}",
                    input.test.shape(),
                    input.reference.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Front-end branch: `F×S` → `32×S` (conv + ReLU).
    fn frontend<'p>(&'p self, tape: &mut Tape<'p>, rep: &Tensor, w: Var, b: Var) -> Result<Var> {
        let x = tape.constant(rep.reshaped(vec![1, self.features, self.frames])?);
        let x = tape.conv2d(x, w, b, 1)?;
        let x = tape.relu(x);
        tape.reshape(x, &[FRONTEND_CHANNELS, self.frames])
    }

    /// Records the pipeline up to the `1×S×S` distance image.
    pub fn distance_node<'p>(&'p self, tape: &mut Tape<'p>, input: &PairInput) -> Result<Var> {
        self.check_input(input)?;
        // One stored front-end, used by both branches.
        let w = tape.param_named("frontend.weight")?;
        let b = tape.param_named("frontend.bias")?;
        let t = self.frontend(tape, &input.test, w, b)?;
        let r = self.frontend(tape, &input.reference, w, b)?;
        let d = tape.pairwise_euclidean(t, r, EUCLIDEAN_EPS)?;
        tape.reshape(d, &[1, self.frames, self.frames])
    }

    /// The `S×S` distance image for a pair (inference, no gradients kept).
    pub fn distance_image(&self, input: &PairInput) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let d = self.distance_node(&mut tape, input)?;
        tape.value(d).reshaped(vec![self.frames, self.frames])
    }

    /// Front-end output `32×S` for one representation.
    pub fn frontend_output(&self, rep: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let w = tape.param_named("frontend.weight")?;
        let b = tape.param_named("frontend.bias")?;
        let v = self.frontend(&mut tape, rep, w, b)?;
        Ok(tape.value(v).clone())
    }
}

impl Network for ProposedNet {
    type Input = PairInput;

    fn kind(&self) -> ModelKind {
        ModelKind::Proposed
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
        input: &PairInput,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let d = self.distance_node(tape, input)?;
        classifier_logits(tape, d, self.dropout, training, rng)
    }
}
