//! Loss, optimiser, learning-rate schedule, early stopping and the
//! training loop.

mod checkpoint;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
pub use optim::{adam_step, clip_grad_norm, AdamHyper, AdamState, ADAM_EPS, BETA1, BETA2};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::tensor::Scalar;

/// Mean squared difference over every element.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::shapes("mse_loss", tape.shape(pred), tape.shape(target)));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// `base_lr / 2^epoch`, epochs counted from 0.
pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    base_lr / 2f64.powi(epoch as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Independent weight initialisations over the same splits.
    pub restarts: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            max_epochs: 10,
            patience: 3,
            batch_size: 32,
            base_lr: 1e-4,
            seed: 0,
            grad_clip: None,
            restarts: 1,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_epochs == 0 || self.batch_size == 0 || self.restarts == 0 {
            return bad("max_epochs, batch_size and restarts must be >= 1".into());
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return bad(format!("patience {} must be in 1..max_epochs ({})", self.patience, self.max_epochs));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }
}

/// Tracks the best validation loss and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    /// Records epoch `epoch`'s validation loss; returns whether it is the
    /// new best. Only strict decreases count as improvement.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        match self.best {
            Some((_, b)) if val_loss >= b => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    /// Training-set loss of the freshly initialised model.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean squared error over every window of `set`, in eval mode.
pub fn dataset_loss<T: Scalar>(model: &Model<T>, set: &WindowSet<T>, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Usage("loss over an empty window set".into()));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for b in set.batches(batch_size) {
        let p = model.predict(&b.encoder, &b.decoder)?;
        if p.shape() != b.target.shape() {
            return Err(Error::shapes("dataset_loss", p.shape(), b.target.shape()));
        }
        sse += p.data().iter().zip(b.target.data()).map(|(a, t)| (a.f64() - t.f64()).powi(2)).sum::<f64>();
        n += p.len();
    }
    Ok(sse / n as f64)
}

/// One optimiser step on `indices` of `set`; returns the pre-step loss.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    set: &WindowSet<T>,
    indices: &[usize],
    state: &mut AdamState<T>,
    lr: f64,
    grad_clip: Option<f64>,
    ctx: &mut ForwardCtx,
) -> Result<f64> {
    let batch = set.batch(indices);
    let mut tape = Tape::new();
    let (pred, vars) = model.forward(&mut tape, &batch.encoder, &batch.decoder, ctx)?;
    let target = tape.constant(batch.target);
    let loss = mse_loss(&mut tape, pred, target)?;
    let value = tape.value(loss).item().f64();
    if !value.is_finite() {
        return Ok(value);
    }
    let mut g = tape.backward(loss)?;
    let mut grads: Vec<_> = vars.iter().map(|&v| g.take(v)).collect();
    if let Some(c) = grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    adam_step(model.params_mut().tensors_mut(), &grads, state, lr)?;
    Ok(value)
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation loss.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &WindowSet<T>,
    val_set: &WindowSet<T>,
    cfg: &TrainRunConfig,
) -> Result<LossTrace> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("training needs non-empty train and validation sets".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ctx = ForwardCtx::train(cfg.seed.wrapping_add(0x5eed));
    let mut state = AdamState::new(model.params().tensors());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let initial_train_loss = dataset_loss(model, train_set, cfg.batch_size)?;
    let mut best_params = model.params().flatten();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for e in 0..cfg.max_epochs {
        let lr = lr_at_epoch(cfg.base_lr, e);
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(model, train_set, chunk, &mut state, lr, cfg.grad_clip, &mut ctx)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: e + 1, batch: bi });
            }
            weighted += loss * chunk.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let val_loss = dataset_loss(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch: e + 1, batch: order.len().div_ceil(cfg.batch_size) });
        }
        epochs.push(EpochRecord { epoch: e + 1, lr, train_loss, val_loss });
        if stopper.observe(e + 1, val_loss) {
            best_params = model.params().flatten();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.params_mut().load_flat(&best_params)?;
    let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
    let stopped_early = epochs.len() < cfg.max_epochs;
    Ok(LossTrace { initial_train_loss, epochs, best_epoch, best_val_loss, stopped_early })
}
