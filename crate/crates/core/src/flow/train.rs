use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FlowModel;
use crate::data::{apply_standardizer, SeriesDataset};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be positive".into()));
        }
        let ok = |v: f64| v.is_finite();
        if !(ok(self.learning_rate) && self.learning_rate > 0.0) {
            return Err(Error::Input(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Input("Adam betas must lie in [0, 1)".into()));
        }
        if !(ok(self.adam_eps) && self.adam_eps > 0.0) {
            return Err(Error::Input("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    /// Mean training NLL per epoch (standardised space).
    pub loss_trace: Vec<f64>,
}

/// Maximum-likelihood fit by shuffled minibatch Adam.
///
/// `train_set` holds raw series; they are standardised with the model's
/// statistics. Each epoch's loss is the mean NLL accumulated during that
/// epoch's passes.
pub fn train_mle(
    model: &FlowModel,
    train_set: &SeriesDataset,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train_set.context_len != model.context_len || train_set.horizon != model.horizon || train_set.dim != model.dim {
        return Err(Error::Shape(format!(
            "training data is (T={}, H={}, D={}), model is (T={}, H={}, D={})",
            train_set.context_len, train_set.horizon, train_set.dim, model.context_len, model.horizon, model.dim
        )));
    }
    let data = apply_standardizer(train_set, &model.stats);
    let contexts: Vec<&[Vec<f64>]> = (0..data.len()).map(|i| data.context(i)).collect();
    let labels: Vec<Vec<f64>> = (0..data.len()).map(|i| data.future_flat(i)).collect();

    let mut model = model.clone();
    let mut params = model.params_flat();
    let mut adam = AdamState::new(params.len(), config.adam());
    let mut grads = model.zeros_like();
    let mut flat_grads = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    let diverged = |epoch: usize, trace: &[f64], reason: String| Error::Divergence {
        epoch,
        last_finite_epoch: (!trace.is_empty()).then_some(trace.len()),
        last_finite_loss: trace.last().copied(),
        reason,
    };

    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.for_each_slice_mut(&mut |s| s.fill(0.0));
            for &i in batch {
                let nll = model
                    .nll_grad_acc(contexts[i], &labels[i], &mut grads)
                    .map_err(|e| diverged(epoch, &loss_trace, e.to_string()))?;
                if !nll.is_finite() {
                    return Err(diverged(epoch, &loss_trace, format!("non-finite NLL on series {i}")));
                }
                epoch_total += nll;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut off = 0;
            grads.for_each_slice(&mut |s| {
                for (dst, g) in flat_grads[off..off + s.len()].iter_mut().zip(s) {
                    *dst = g * scale;
                }
                off += s.len();
            });
            adam.step(&mut params, &flat_grads)
                .map_err(|e| diverged(epoch, &loss_trace, e.to_string()))?;
            model.set_params_flat(&params)?;
        }
        let mean = epoch_total / data.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(epoch, &loss_trace, "epoch mean NLL is not finite".into()));
        }
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace })
}
