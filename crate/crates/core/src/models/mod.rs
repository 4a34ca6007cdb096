//! The proposed pairwise-distance network, the two baselines, their
//! initialisation, and bundle serialisation.

mod bcnn1;
mod bcnn2;
mod bundle;
mod classifier;
mod init;
mod proposed;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamSet, Tape, Var};
use crate::error::{Error, Result};

pub use bcnn1::{BCnn1Net, BCNN1_FLATTEN};
pub use bcnn2::BCnn2Net;
pub use bundle::{load_bundle, save_bundle, AnyModel, ModelBundle, Provenance, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use classifier::{classifier_chain, ClassifierChain, REFERENCE_FRAMES};
pub use init::{init_random, init_transfer, uniform_bound};
pub use proposed::{PairInput, ProposedNet, FRONTEND_CHANNELS};

/// Dropout probability before the first fully connected layer.
pub const DROPOUT: f32 = 0.5;
/// Default fixed representation length.
pub const DEFAULT_FRAMES: usize = 56;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Proposed,
    Bcnn1,
    Bcnn2,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Proposed => 0,
            ModelKind::Bcnn1 => 1,
            ModelKind::Bcnn2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Proposed),
            1 => Ok(ModelKind::Bcnn1),
            2 => Ok(ModelKind::Bcnn2),
            t => Err(Error::Format(format!("unknown model kind tag {t}"))),
        }
    }

    pub fn distance(self) -> DistanceKind {
        match self {
            ModelKind::Proposed => DistanceKind::Euclidean,
            ModelKind::Bcnn1 => DistanceKind::None,
            ModelKind::Bcnn2 => DistanceKind::Kl,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(ModelKind::Proposed),
            "bcnn1" | "b-cnn1" => Ok(ModelKind::Bcnn1),
            "bcnn2" | "b-cnn2" => Ok(ModelKind::Bcnn2),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (proposed|bcnn1|bcnn2)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Proposed => "proposed",
            ModelKind::Bcnn1 => "bcnn1",
            ModelKind::Bcnn2 => "bcnn2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Euclidean,
    Kl,
    None,
}

impl DistanceKind {
    pub fn tag(self) -> u8 {
        match self {
            DistanceKind::Euclidean => 0,
            DistanceKind::Kl => 1,
            DistanceKind::None => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DistanceKind::Euclidean),
            1 => Ok(DistanceKind::Kl),
            2 => Ok(DistanceKind::None),
            t => Err(Error::Format(format!("unknown distance tag {t}"))),
        }
    }
}

/// A trainable two-class network over inputs of type `Self::Input`.
pub trait Network: Send + Sync {
    type Input: Send + Sync;

    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn set_dropout(&mut self, p: f32);

    /// Records a forward pass on `tape` and returns the 2-way logits.
    fn logits<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        input: &Self::Input,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var>;

    /// Class probabilities `[healthy, dysarthric]` in inference mode.
    fn predict(&self, input: &Self::Input) -> Result<[f64; 2]> {
        let mut tape = Tape::new(self.params());
        // Inference never draws from the generator.
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let z = self.logits(&mut tape, input, false, &mut rng)?;
        let p = crate::autodiff::softmax(tape.value(z).data());
        Ok([p[0], p[1]])
    }

    /// Cross-entropy loss on one sample (inference mode, no gradients).
    fn loss(&self, input: &Self::Input, label: usize) -> Result<f64> {
        let mut tape = Tape::new(self.params());
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let z = self.logits(&mut tape, input, false, &mut rng)?;
        let l = tape.softmax_xent(z, label)?;
        Ok(tape.loss_value(l).expect("loss node"))
    }

    /// Forward + backward on one sample; gradients are scaled by `scale`.
    fn loss_and_grad(
        &self,
        input: &Self::Input,
        label: usize,
        training: bool,
        rng: &mut ChaCha8Rng,
        scale: f32,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(self.params());
        let z = self.logits(&mut tape, input, training, rng)?;
        let l = tape.softmax_xent(z, label)?;
        let loss = tape.loss_value(l).expect("loss node");
        let grads = tape.backward_scaled(l, scale)?;
        Ok((loss, grads))
    }
}
