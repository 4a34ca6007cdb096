use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::schedule::PlateauSchedule;
use crate::autodiff::{Gradients, ParamSet};
use crate::data::subseed;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::models::{Network, DROPOUT};

/// Samples per gradient chunk. Chunks are evaluated independently and
/// reduced in order, so results do not depend on the thread count.
const CHUNK: usize = 16;

const SHUFFLE_STREAM: u64 = 11;
const DROPOUT_STREAM: u64 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_factor: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr_min: f64,
    pub dropout: f32,
    pub seed: u64,
    /// Dev loss must drop by more than this to count as an improvement.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr0: 0.05,
            lr_factor: 5.0,
            patience: 5,
            max_epochs: 100,
            lr_min: 1e-6,
            dropout: DROPOUT,
            seed: 0,
            min_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch_size, patience and max_epochs must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr_min > 0.0 && self.lr_factor > 1.0) {
            return bad(format!(
                "need lr0 > 0, lr_min > 0, lr_factor > 1 (got {}, {}, {})",
                self.lr0, self.lr_min, self.lr_factor
            ));
        }
        if self.lr_min >= self.lr0 {
            return bad(format!("lr_min {} must be below lr0 {}", self.lr_min, self.lr0));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta {} must be nonnegative", self.min_delta));
        }
        Ok(())
    }

    fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule::new(
            self.lr0,
            self.lr_factor,
            self.patience,
            self.lr_min,
            self.max_epochs,
            self.min_delta,
        )
    }
}

/// One labelled network input: a pair, a distance image or a segment.
#[derive(Clone, Debug)]
pub struct Sample<I> {
    pub input: I,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// Mean inference-mode cross-entropy over `samples`.
pub fn evaluate_dev_loss<N: Network>(model: &N, samples: &[Sample<N::Input>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(&s.input, s.label.index()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and summed gradients (already divided by the batch size) for
/// one batch.
fn batch_gradients<N: Network>(
    model: &N,
    samples: &[Sample<N::Input>],
    batch: &[usize],
    seed: u64,
    epoch: usize,
    offset: usize,
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / batch.len() as f32;
    let chunks: Vec<(f64, Gradients)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, idx)| {
            let mut total = 0.0;
            let mut acc: Option<Gradients> = None;
            for (k, &i) in idx.iter().enumerate() {
                let position = (offset + c * CHUNK + k) as u64;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(subseed(seed, DROPOUT_STREAM, epoch as u64, position));
                let s = &samples[i];
                let (loss, g) = model.loss_and_grad(&s.input, s.label.index(), true, &mut rng, scale)?;
                total += loss;
                match &mut acc {
                    Some(a) => a.merge(g),
                    None => acc = Some(g),
                }
            }
            Ok((total, acc.expect("chunks are nonempty")))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads: Option<Gradients> = None;
    for (l, g) in chunks {
        loss += l;
        match &mut grads {
            Some(a) => a.merge(g),
            None => grads = Some(g),
        }
    }
    Ok((loss / batch.len() as f64, grads.expect("batch is nonempty")))
}

/// Minibatch SGD with the plateau schedule. On return `model` holds the
/// parameters from the epoch with the lowest dev loss.
pub fn train<N: Network>(
    model: &mut N,
    train_set: &[Sample<N::Input>],
    dev_set: &[Sample<N::Input>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    model.set_dropout(cfg.dropout);
    model.params_mut().zero_grad();

    let mut schedule = cfg.schedule();
    let mut best: Option<(usize, f64, ParamSet)> = None;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, SHUFFLE_STREAM, epoch as u64, 0));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) =
                batch_gradients(model, train_set, batch, cfg.seed, epoch, b * cfg.batch_size)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    lr,
                    detail: format!("batch loss {loss}"),
                });
            }
            train_loss += loss * batch.len() as f64;
            let params = model.params_mut();
            params.accumulate(&grads)?;
            params.sgd_step(lr as f32)?;
            if let Some(p) = params.iter().find(|p| !p.value.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    lr,
                    detail: format!("parameter `{}` became non-finite", p.name),
                });
            }
        }
        train_loss /= train_set.len() as f64;

        let dev_loss = evaluate_dev_loss(model, dev_set)?;
        if !dev_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                lr,
                detail: format!("dev loss {dev_loss}"),
            });
        }
        let step = schedule.observe(dev_loss);
        if step.improved {
            best = Some((epoch, dev_loss, model.params().clone()));
        }
        let report = EpochReport {
            epoch,
            lr,
            train_loss,
            dev_loss,
            improved: step.improved,
        };
        log::debug!(
            "epoch {epoch}: lr {lr:.3e} train {train_loss:.5} dev {dev_loss:.5}{}",
            if step.improved { " *" } else { "" }
        );
        epochs.push(report);
        if step.stop {
            break;
        }
    }

    // The first epoch always improves on an infinite best, so `best` is set.
    let (best_epoch, best_dev_loss, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    for p in model.params_mut().iter_mut() {
        p.grad = None;
    }
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_dev_loss,
    })
}

/// Writes `epoch,lr,train_loss,dev_loss,improved` rows.
pub fn write_epoch_log(path: &Path, epochs: &[EpochReport]) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,dev_loss,improved\n");
    for e in epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.lr, e.train_loss, e.dev_loss, e.improved as u8
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
