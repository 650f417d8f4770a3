use serde::{Deserialize, Serialize};

use crate::encoder::HiddenState;
use crate::error::{Error, Result};
use crate::numerics::{Activation, MlpCache, MlpParams, SeededRng};

/// Conditional affine coupling.
///
/// Coordinates with `mask[j] == false` pass through unchanged; the others are
/// scaled and shifted by `s, t = nets(pass-through ⧺ h)` with the scale
/// bounded as `s = s_clamp · tanh(raw)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub mask: Vec<bool>,
    pub s_net: MlpParams,
    pub t_net: MlpParams,
    pub s_clamp: f64,
    #[serde(skip)]
    pass: Vec<usize>,
    #[serde(skip)]
    moved: Vec<usize>,
}

/// Intermediates of one inverse pass, for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct CouplingCache {
    s_cache: MlpCache,
    t_cache: MlpCache,
    tanh_raw: Vec<f64>,
    scale: Vec<f64>,
    z_moved: Vec<f64>,
}

/// Alternating even/odd mask: even layers transform odd coordinates and odd
/// layers transform even ones. A one-dimensional label is always transformed.
pub fn alternating_mask(label_dim: usize, layer: usize) -> Vec<bool> {
    if label_dim == 1 {
        return vec![true];
    }
    (0..label_dim).map(|j| j % 2 != layer % 2).collect()
}

impl CouplingLayer {
    /// Nets with `hidden_layers` tanh layers of `width`; final layers start at
    /// zero so the layer is the identity.
    pub fn new(
        mask: Vec<bool>,
        hidden_dim: usize,
        width: usize,
        hidden_layers: usize,
        s_clamp: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let n_pass = mask.iter().filter(|m| !**m).count();
        let n_moved = mask.len() - n_pass;
        let mut sizes = vec![n_pass + hidden_dim];
        sizes.extend(std::iter::repeat(width).take(hidden_layers));
        sizes.push(n_moved);
        let s_net = MlpParams::new(&sizes, Activation::Identity, true, rng);
        let t_net = MlpParams::new(&sizes, Activation::Identity, true, rng);
        Self::from_parts(mask, s_net, t_net, s_clamp, hidden_dim)
    }

    pub fn from_parts(
        mask: Vec<bool>,
        s_net: MlpParams,
        t_net: MlpParams,
        s_clamp: f64,
        hidden_dim: usize,
    ) -> Result<Self> {
        let mut layer = Self {
            mask,
            s_net,
            t_net,
            s_clamp,
            pass: Vec::new(),
            moved: Vec::new(),
        };
        layer.rebuild(hidden_dim)?;
        Ok(layer)
    }

    /// Recomputes index lists and checks every invariant.
    pub(crate) fn rebuild(&mut self, hidden_dim: usize) -> Result<()> {
        self.pass = (0..self.mask.len()).filter(|&j| !self.mask[j]).collect();
        self.moved = (0..self.mask.len()).filter(|&j| self.mask[j]).collect();
        if self.moved.is_empty() {
            return Err(Error::Shape("coupling mask transforms no coordinate".into()));
        }
        if self.mask.len() >= 2 && self.pass.is_empty() {
            return Err(Error::Shape("coupling mask passes no coordinate through".into()));
        }
        if !(self.s_clamp.is_finite() && self.s_clamp > 0.0) {
            return Err(Error::Shape(format!("s_clamp must be positive, got {}", self.s_clamp)));
        }
        for (name, net) in [("s", &self.s_net), ("t", &self.t_net)] {
            net.validate()?;
            if net.input_dim() != self.pass.len() + hidden_dim || net.output_dim() != self.moved.len() {
                return Err(Error::Shape(format!(
                    "{name}-net maps {} -> {}, expected {} -> {}",
                    net.input_dim(),
                    net.output_dim(),
                    self.pass.len() + hidden_dim,
                    self.moved.len()
                )));
            }
        }
        Ok(())
    }

    pub fn label_dim(&self) -> usize {
        self.mask.len()
    }

    pub fn transformed(&self) -> &[usize] {
        &self.moved
    }

    fn net_input(&self, v: &[f64], h: &[f64]) -> Vec<f64> {
        let mut inp = Vec::with_capacity(self.pass.len() + h.len());
        inp.extend(self.pass.iter().map(|&j| v[j]));
        inp.extend_from_slice(h);
        inp
    }

    fn check(&self, v: &[f64], h: &[f64]) -> Result<()> {
        if v.len() != self.mask.len() || self.s_net.input_dim() != self.pass.len() + h.len() {
            return Err(Error::Shape(format!(
                "coupling got label {} / hidden {}, expects label {}",
                v.len(),
                h.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }

    fn scale_shift(&self, inp: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, MlpCache, MlpCache)> {
        let (raw, s_cache) = self.s_net.forward(inp)?;
        let (shift, t_cache) = self.t_net.forward(inp)?;
        let tanh_raw: Vec<f64> = raw.iter().map(|r| r.tanh()).collect();
        let scale: Vec<f64> = tanh_raw.iter().map(|v| self.s_clamp * v).collect();
        if !scale.iter().chain(&shift).all(|v| v.is_finite()) {
            return Err(Error::Degenerate("coupling network produced a non-finite scale or shift".into()));
        }
        Ok((scale, shift, tanh_raw, s_cache, t_cache))
    }

    /// Data-to-latent direction: returns the transformed vector and its
    /// log-abs-determinant `-Σ s`.
    pub(crate) fn inverse_raw(&self, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.inverse_cached(x, h).map(|(z, ld, _)| (z, ld))
    }

    pub(crate) fn inverse_cached(&self, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, f64, CouplingCache)> {
        self.check(x, h)?;
        let inp = self.net_input(x, h);
        let (scale, shift, tanh_raw, s_cache, t_cache) = self.scale_shift(&inp)?;
        let mut z = x.to_vec();
        let mut z_moved = Vec::with_capacity(self.moved.len());
        let mut log_det = 0.0;
        for (k, &j) in self.moved.iter().enumerate() {
            let v = (x[j] - shift[k]) * (-scale[k]).exp();
            z[j] = v;
            z_moved.push(v);
            log_det -= scale[k];
        }
        Ok((
            z,
            log_det,
            CouplingCache {
                s_cache,
                t_cache,
                tanh_raw,
                scale,
                z_moved,
            },
        ))
    }

    /// Latent-to-data direction, the exact inverse of [`inverse_raw`](Self::inverse_raw).
    pub(crate) fn forward_raw(&self, z: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        self.check(z, h)?;
        let inp = self.net_input(z, h);
        let (scale, shift, ..) = self.scale_shift(&inp)?;
        let mut x = z.to_vec();
        for (k, &j) in self.moved.iter().enumerate() {
            x[j] = z[j] * scale[k].exp() + shift[k];
        }
        Ok(x)
    }

    /// Backpropagates through one inverse pass.
    ///
    /// `grad_out` is the cotangent of the layer output and `grad_log_det` that
    /// of its log-determinant. Returns the cotangent of the layer input and
    /// adds the conditioning cotangent into `grad_h`.
    pub(crate) fn backward_acc(
        &self,
        cache: &CouplingCache,
        grad_out: &[f64],
        grad_log_det: f64,
        grads: &mut CouplingLayer,
        grad_h: &mut [f64],
    ) -> Result<Vec<f64>> {
        let n_moved = self.moved.len();
        let mut grad_in = grad_out.to_vec();
        let mut g_raw = vec![0.0; n_moved];
        let mut g_shift = vec![0.0; n_moved];
        for (k, &j) in self.moved.iter().enumerate() {
            let es = (-cache.scale[k]).exp();
            let g = grad_out[j];
            grad_in[j] = g * es;
            g_shift[k] = -g * es;
            let g_scale = -g * cache.z_moved[k] - grad_log_det;
            let th = cache.tanh_raw[k];
            g_raw[k] = g_scale * self.s_clamp * (1.0 - th * th);
        }
        let gi_s = self.s_net.backward_acc(&cache.s_cache, &g_raw, &mut grads.s_net)?;
        let gi_t = self.t_net.backward_acc(&cache.t_cache, &g_shift, &mut grads.t_net)?;
        let n_pass = self.pass.len();
        for (i, &j) in self.pass.iter().enumerate() {
            grad_in[j] += gi_s[i] + gi_t[i];
        }
        for (r, g) in grad_h.iter_mut().enumerate() {
            *g += gi_s[n_pass + r] + gi_t[n_pass + r];
        }
        Ok(grad_in)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            mask: self.mask.clone(),
            s_net: self.s_net.zeros_like(),
            t_net: self.t_net.zeros_like(),
            s_clamp: self.s_clamp,
            pass: self.pass.clone(),
            moved: self.moved.clone(),
        }
    }
}

/// Inverse (data-to-latent) pass of one layer.
pub fn coupling_inverse(layer: &CouplingLayer, x: &[f64], h: &HiddenState) -> Result<(Vec<f64>, f64)> {
    layer.inverse_raw(x, &h.values)
}

/// Forward (latent-to-data) pass of one layer.
pub fn coupling_forward(layer: &CouplingLayer, z: &[f64], h: &HiddenState) -> Result<Vec<f64>> {
    layer.forward_raw(z, &h.values)
}
