use rand_chacha::ChaCha8Rng;

use super::classifier::{classifier_chain, classifier_logits, classifier_shapes, ClassifierChain};
use super::proposed::PairInput;
use super::{ModelKind, Network, DROPOUT};
use crate::autodiff::{pairwise_kl, ParamSet, Tape, Tensor, Var, KL_FLOOR};
use crate::error::{Error, Result};

/// The distance-image classifier trained on KL distances computed directly
/// from posterior features (no front-end).
#[derive(Clone, Debug)]
pub struct BCnn2Net {
    params: ParamSet,
    features: usize,
    frames: usize,
    chain: ClassifierChain,
    pub dropout: f32,
}

impl BCnn2Net {
    /// `features` is the posterior count of the inputs the distances are computed from.
    pub fn from_params(params: ParamSet, features: usize, frames: usize) -> Result<Self> {
        let chain = classifier_chain(frames)?;
        super::init::check_shapes(&params, &classifier_shapes(&chain))?;
        Ok(BCnn2Net {
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

    /// `1×S×S` KL distance image of a raw-posterior pair.
    pub fn distance_image(pair: &PairInput) -> Result<Tensor> {
        let d = pairwise_kl(&pair.test, &pair.reference, KL_FLOOR)?;
        let s = d.shape()[0];
        d.reshaped(vec![1, s, s])
    }

    /// Class probabilities for a raw-posterior pair.
    pub fn predict_pair(&self, pair: &PairInput) -> Result<[f64; 2]> {
        let want = [self.features, self.frames];
        if pair.test.shape() != want || pair.reference.shape() != want {
            return Err(Error::dim(
                "forward_bcnn2",
                format!(
                    "test {:?} / reference {:?}, expected {want:?}",
                    pair.test.shape(),
                    pair.reference.shape()
                ),
            ));
        }
        self.predict(&Self::distance_image(pair)?)
    }
}

impl Network for BCnn2Net {
    /// A precomputed `1×S×S` distance image.
    type Input = Tensor;

    fn kind(&self) -> ModelKind {
        ModelKind::Bcnn2
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
        image: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if image.shape() != [1, self.frames, self.frames] {
            return Err(Error::dim(
                "forward_bcnn2",
                format!("image {:?}, expected [1, {s}, {s}]", image.shape(), s = self.frames),
            ));
        }
        let x = tape.constant(image.clone());
        classifier_logits(tape, x, self.dropout, training, rng)
    }
}
