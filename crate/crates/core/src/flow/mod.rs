//! Conditional normalising flow over the flattened `horizon × dim` future.
//!
//! The density direction maps a label through the coupling stack in order
//! (layer 0 first) to the latent space; sampling runs the stack backwards.
//! Log-densities are natural logs in standardised label space.

mod coupling;
mod io;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use coupling::{alternating_mask, coupling_forward, coupling_inverse, CouplingLayer};
pub use io::{ModelFile, MODEL_FORMAT, MODEL_VERSION};
pub use train::{train_mle, TrainConfig, TrainOutcome};

use crate::data::{DatasetSchema, Standardizer};
use crate::encoder::{self, GruParams, HiddenState};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // ln(2π) / 2

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub s_clamp: f64,
    pub gru_hidden: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden_width: 64,
            hidden_layers: 2,
            s_clamp: 3.0,
            gru_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogDensity(pub f64);

/// GRU encoder plus a stack of conditional coupling layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub context_len: usize,
    pub horizon: usize,
    pub dim: usize,
    pub config: FlowConfig,
    pub encoder: GruParams,
    pub layers: Vec<CouplingLayer>,
    pub stats: Standardizer,
}

/// Standard-normal log-density of `z`.
pub fn standard_normal_log_pdf(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - HALF_LN_TAU * z.len() as f64
}

impl FlowModel {
    /// Fresh model: random encoder and hidden layers, zero output layers, so
    /// the flow starts as the identity map.
    pub fn new(config: FlowConfig, schema: DatasetSchema, stats: Standardizer, seed: u64) -> Result<Self> {
        let label_dim = schema.label_dim();
        if config.layers < 2 {
            return Err(Error::Input(format!("need at least 2 coupling layers, got {}", config.layers)));
        }
        if config.gru_hidden == 0 || config.hidden_width == 0 {
            return Err(Error::Input("hidden sizes must be positive".into()));
        }
        if stats.dim() != schema.dim || stats.label_dim() != label_dim {
            return Err(Error::Shape(format!(
                "standardiser covers {}/{} coordinates, schema needs {}/{}",
                stats.dim(),
                stats.label_dim(),
                schema.dim,
                label_dim
            )));
        }
        let mut rng = SeededRng::new(seed);
        let encoder = GruParams::new(schema.dim, config.gru_hidden, &mut rng);
        let layers = (0..config.layers)
            .map(|k| {
                CouplingLayer::new(
                    alternating_mask(label_dim, k),
                    config.gru_hidden,
                    config.hidden_width,
                    config.hidden_layers,
                    config.s_clamp,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            context_len: schema.context_len,
            horizon: schema.horizon,
            dim: schema.dim,
            config,
            encoder,
            layers,
            stats,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn label_dim(&self) -> usize {
        self.horizon * self.dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim
    }

    /// Checks structural invariants and rebuilds derived layer data.
    pub(crate) fn validate_and_rebuild(&mut self) -> Result<()> {
        let hidden = self.encoder.hidden_dim;
        for layer in &mut self.layers {
            layer.rebuild(hidden)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 || self.horizon == 0 || self.dim == 0 {
            return Err(Error::Shape("model dimensions must be positive".into()));
        }
        let label_dim = self
            .horizon
            .checked_mul(self.dim)
            .ok_or_else(|| Error::Shape("label dimension overflows".into()))?;
        self.encoder.validate()?;
        if self.encoder.input_dim != self.dim {
            return Err(Error::Shape("encoder input dimension differs from data dimension".into()));
        }
        self.stats.validate()?;
        if self.stats.dim() != self.dim || self.stats.label_dim() != label_dim {
            return Err(Error::Shape("standardiser does not match model dimensions".into()));
        }
        if self.layers.len() < 2 {
            return Err(Error::Shape("a flow needs at least two coupling layers".into()));
        }
        let mut covered = vec![false; label_dim];
        for layer in &self.layers {
            if layer.label_dim() != label_dim || layer.transformed().is_empty() {
                return Err(Error::Shape("coupling layer does not match label dimension".into()));
            }
            for &j in layer.transformed() {
                covered[j] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::Shape("some label coordinate is never transformed".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(&mut |s| n += s.len());
        n
    }

    pub fn for_each_slice(&self, f: &mut impl FnMut(&[f64])) {
        self.encoder.for_each_slice(f);
        for layer in &self.layers {
            layer.s_net.for_each_slice(f);
            layer.t_net.for_each_slice(f);
        }
    }

    pub fn for_each_slice_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        self.encoder.for_each_slice_mut(f);
        for layer in &mut self.layers {
            layer.s_net.for_each_slice_mut(f);
            layer.t_net.for_each_slice_mut(f);
        }
    }

    /// All trainable parameters in a fixed order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.for_each_slice(&mut |s| v.extend_from_slice(s));
        v
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        self.for_each_slice_mut(&mut |s| {
            s.copy_from_slice(&values[off..off + s.len()]);
            off += s.len();
        });
        Ok(())
    }

    /// Same structure with all parameters zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            layers: self.layers.iter().map(CouplingLayer::zeros_like).collect(),
            ..self.clone()
        }
    }

    /// SHA-256 over the canonical JSON encoding of the model.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serialises");
        hex::encode(Sha256::digest(bytes))
    }

    fn check_context(&self, context: &[Vec<f64>]) -> Result<()> {
        if context.len() != self.context_len {
            return Err(Error::Shape(format!(
                "context has {} steps, model expects {}",
                context.len(),
                self.context_len
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.label_dim() {
            return Err(Error::Shape(format!(
                "label has {} coordinates, model expects {}",
                y.len(),
                self.label_dim()
            )));
        }
        Ok(())
    }

    /// Encodes an already standardised context.
    pub fn encode_standardized(&self, context: &[Vec<f64>]) -> Result<HiddenState> {
        self.check_context(context)?;
        encoder::encode_context(&self.encoder, context, &HiddenState::zeros(self.hidden_dim()))
    }

    /// Standardises a raw context with the model's statistics and encodes it.
    pub fn condition(&self, raw_context: &[Vec<f64>]) -> Result<HiddenState> {
        self.encode_standardized(&self.stats.context(raw_context))
    }

    /// Log-density of a standardised label given the encoded context.
    pub fn log_prob_given(&self, h: &HiddenState, y: &[f64]) -> Result<f64> {
        self.check_label(y)?;
        let mut u = y.to_vec();
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (next, ld) = layer.inverse_raw(&u, &h.values)?;
            u = next;
            log_det += ld;
        }
        let lp = standard_normal_log_pdf(&u) + log_det;
        if !lp.is_finite() {
            return Err(Error::Density(format!("non-finite log-density {lp}")));
        }
        Ok(lp)
    }

    /// Standardised-space log-density of a label given in raw units.
    pub fn log_prob_raw_label(&self, h: &HiddenState, y_raw: &[f64]) -> Result<f64> {
        self.check_label(y_raw)?;
        self.log_prob_given(h, &self.stats.label(y_raw))
    }

    /// Pushes latent draws through the stack in reverse order.
    pub fn sample_given(&self, h: &HiddenState, rng: &mut SeededRng, n: usize) -> Result<Vec<Vec<f64>>> {
        let l = self.label_dim();
        (0..n)
            .map(|_| {
                let mut x = rng.standard_normal(l);
                for layer in self.layers.iter().rev() {
                    x = layer.forward_raw(&x, &h.values)?;
                }
                Ok(x)
            })
            .collect()
    }

    /// Maps a standardised label to the latent space; returns `(z, Σ log_det)`.
    pub fn to_latent(&self, h: &HiddenState, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_label(y)?;
        let mut u = y.to_vec();
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (next, ld) = layer.inverse_raw(&u, &h.values)?;
            u = next;
            log_det += ld;
        }
        Ok((u, log_det))
    }

    /// Maps a latent vector to a standardised label.
    pub fn from_latent(&self, h: &HiddenState, z: &[f64]) -> Result<Vec<f64>> {
        self.check_label(z)?;
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            x = layer.forward_raw(&x, &h.values)?;
        }
        Ok(x)
    }

    /// Negative log-likelihood of one standardised example; gradients are
    /// added into `grads` (a buffer from [`zeros_like`](Self::zeros_like)).
    pub fn nll_grad_acc(&self, context: &[Vec<f64>], y: &[f64], grads: &mut FlowModel) -> Result<f64> {
        self.check_context(context)?;
        self.check_label(y)?;
        let (h, trace) = encoder::encode_with_trace(&self.encoder, context)?;
        let mut u = y.to_vec();
        let mut log_det = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, ld, cache) = layer.inverse_cached(&u, &h.values)?;
            u = next;
            log_det += ld;
            caches.push(cache);
        }
        let nll = -(standard_normal_log_pdf(&u) + log_det);

        let mut g_u = u;
        let mut g_h = vec![0.0; self.hidden_dim()];
        for ((layer, cache), g_layer) in self.layers.iter().zip(&caches).zip(grads.layers.iter_mut()).rev() {
            g_u = layer.backward_acc(cache, &g_u, -1.0, g_layer, &mut g_h)?;
        }
        encoder::backward_acc(&self.encoder, &trace, &g_h, &mut grads.encoder)?;
        Ok(nll)
    }

    /// Mean NLL over standardised examples, without gradients.
    pub fn mean_nll(&self, contexts: &[Vec<Vec<f64>>], labels: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (c, y) in contexts.iter().zip(labels) {
            let h = self.encode_standardized(c)?;
            total -= self.log_prob_given(&h, y)?;
        }
        Ok(total / contexts.len().max(1) as f64)
    }
}

/// `log p(y | context)` with both inputs already standardised.
pub fn flow_log_prob(model: &FlowModel, context: &[Vec<f64>], y: &[f64]) -> Result<LogDensity> {
    let h = model.encode_standardized(context)?;
    model.log_prob_given(&h, y).map(LogDensity)
}

/// `n` standardised labels drawn from the flow given a standardised context.
pub fn flow_sample(model: &FlowModel, context: &[Vec<f64>], rng: &mut SeededRng, n: usize) -> Result<Vec<Vec<f64>>> {
    let h = model.encode_standardized(context)?;
    model.sample_given(&h, rng, n)
}
