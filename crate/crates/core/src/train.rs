//! Binary cross-entropy training with validation-based early stopping.
//!
//! Training stops as soon as an epoch's validation loss exceeds the previous
//! epoch's, and the parameters from that previous epoch are returned.

use alloc::vec::Vec;

use crate::math::ln;
use crate::models::{ConversationModel, Example, ModelConfig, ModelParams};
use crate::params::{Optimizer, OptimizerKind, Parameters};
use crate::rng::Rng;
use crate::{Error, Result};

/// Distance kept from 0 and 1 before taking logarithms.
pub const SCORE_CLAMP: f64 = 1e-12;

/// `−y·ln(s) − (1−y)·ln(1−s)` with `s` clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let s = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -label * ln(s) - (1.0 - label) * ln(1.0 - s)
}

/// Runs independent jobs and returns their results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Anything trainable by [`train`]: parameters plus a per-example loss and
/// gradient.
pub trait Trainable: Sync {
    type Params: Parameters + Clone + Send + Sync;
    type Example: Sync;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn loss(&self, example: &Self::Example) -> Result<f64>;
    /// Adds the example's gradient into `grads` and returns its loss.
    fn loss_and_grad(&self, example: &Self::Example, grads: &mut Self::Params) -> Result<f64>;
}

impl Trainable for ConversationModel {
    type Params = ModelParams;
    type Example = Example;

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn loss(&self, example: &Example) -> Result<f64> {
        self.params.loss(example)
    }

    fn loss_and_grad(&self, example: &Example, grads: &mut ModelParams) -> Result<f64> {
        self.params.loss_and_grad(example, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 20,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(alloc::format!(
                "learning rate {} is not a finite non-negative number",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be at least 1".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Examples per gradient job. Fixed, so the summation order and therefore
/// the result do not depend on the executor's thread count.
const CHUNK: usize = 4;

fn batch_gradient<T: Trainable, E: Executor>(model: &T, batch: &[&T::Example], exec: &E) -> Result<(T::Params, f64)> {
    let chunks: Vec<&[&T::Example]> = batch.chunks(CHUNK).collect();
    let parts = exec.map(chunks.len(), |c| -> Result<(T::Params, f64)> {
        let mut g = model.params().zeros_like();
        let mut loss = 0.0;
        for ex in chunks[c] {
            loss += model.loss_and_grad(ex, &mut g)?;
        }
        Ok((g, loss))
    });
    let mut total: Option<(T::Params, f64)> = None;
    for part in parts {
        let (g, l) = part?;
        match &mut total {
            None => total = Some((g, l)),
            Some((acc, al)) => {
                acc.add_scaled(&g, 1.0)?;
                *al += l;
            }
        }
    }
    let (mut g, l) = total.ok_or_else(|| Error::Internal("empty batch".into()))?;
    let n = batch.len() as f64;
    g.scale(1.0 / n);
    Ok((g, l / n))
}

/// Mean loss over `examples`, evaluated in parallel and summed in order.
pub fn mean_loss<T: Trainable, E: Executor>(model: &T, examples: &[T::Example], exec: &E) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("cannot average a loss over no examples".into()));
    }
    let chunks: Vec<&[T::Example]> = examples.chunks(64).collect();
    let parts = exec.map(chunks.len(), |c| -> Result<f64> {
        chunks[c].iter().map(|ex| model.loss(ex)).sum()
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / examples.len() as f64)
}

/// Mini-batch training with the validation-loss stopping rule.
///
/// Examples are reshuffled each epoch from the config seed. A non-finite
/// batch loss or parameter aborts with [`Error::Divergence`].
pub fn train<T: Trainable, E: Executor>(
    model: &mut T,
    train_set: &[T::Example],
    valid_set: &[T::Example],
    config: &TrainConfig,
    exec: &E,
) -> Result<TrainReport> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be at least 1".into()));
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let rng = Rng::new(config.seed).fork(0x74_7261_696e);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut previous: Option<T::Params> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        rng.fork(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&T::Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (grads, loss) = batch_gradient(model, &batch, exec).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, batch: b },
                other => other,
            })?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            optimizer.step(model.params_mut(), &grads, config.learning_rate)?;
            if !model.params().all_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let valid_loss = mean_loss(model, valid_set, exec)?;
        if !valid_loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        let rose = history.last().is_some_and(|h| valid_loss > h.valid_loss);
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid loss {valid_loss:.6}",
            epoch_loss / train_set.len() as f64
        );
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            valid_loss,
        });
        if rose {
            if let Some(p) = previous.take() {
                *model.params_mut() = p;
            }
            return Ok(TrainReport {
                history,
                best_epoch: epoch - 1,
                stopped_early: true,
            });
        }
        if epoch < config.max_epochs {
            previous = Some(model.params().clone());
        }
    }
    Ok(TrainReport {
        best_epoch: history.len(),
        history,
        stopped_early: false,
    })
}
