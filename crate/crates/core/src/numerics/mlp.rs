use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A fully connected network; each layer computes `act(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

/// Activations recorded by [`MlpParams::forward`].
///
/// `values[0]` is the input and `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl MlpParams {
    /// Builds a network with `sizes[0]` inputs and `sizes.last()` outputs.
    ///
    /// Hidden layers use `tanh`, the output layer `output_activation`.
    /// Weights are drawn from a scaled normal (Glorot variance); when
    /// `zero_output` is set the last layer starts at exactly zero.
    pub fn new(
        sizes: &[usize],
        output_activation: Activation,
        zero_output: bool,
        rng: &mut SeededRng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let last = i + 1 == n;
                let weight = if last && zero_output {
                    DenseMatrix::zeros(fan_out, fan_in)
                } else {
                    let scale = (2.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                    let draws = rng.standard_normal(fan_in * fan_out);
                    DenseMatrix::from_fn(fan_out, fan_in, |r, c| scale * draws[r * fan_in + c])
                };
                DenseLayer {
                    weight,
                    bias: vec![0.0; fan_out],
                    activation: if last { output_activation } else { Activation::Tanh },
                }
            })
            .collect();
        Self { layers }
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.weight.validate()?;
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} vs {} rows",
                    layer.bias.len(),
                    layer.weight.rows()
                )));
            }
            if !super::all_finite(&layer.bias) {
                return Err(Error::Shape(format!("layer {i}: non-finite bias")));
            }
            if i > 0 && self.layers[i - 1].weight.rows() != layer.weight.cols() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    layer.weight.cols(),
                    i - 1,
                    self.layers[i - 1].weight.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP input has length {}, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let mut out = layer.bias.clone();
            layer.weight.matvec_acc(values.last().unwrap(), &mut out);
            for o in &mut out {
                *o = layer.activation.apply(*o);
            }
            values.push(out);
        }
        let output = values.last().unwrap().clone();
        Ok((output, MlpCache { values }))
    }

    /// Gradients of a scalar loss whose gradient w.r.t. the output is `grad_output`.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let grad_input = self.backward_acc(cache, grad_output, &mut grads)?;
        Ok((grads, grad_input))
    }

    /// Like [`backward`](Self::backward) but adds parameter gradients into `grads`.
    pub fn backward_acc(
        &self,
        cache: &MlpCache,
        grad_output: &[f64],
        grads: &mut MlpParams,
    ) -> Result<Vec<f64>> {
        if cache.values.len() != self.layers.len() + 1
            || cache.values[0].len() != self.input_dim()
            || grad_output.len() != self.output_dim()
        {
            return Err(Error::Shape("MLP cache or cotangent does not match parameters".into()));
        }
        let mut delta = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.values[i + 1];
            if out.len() != layer.weight.rows() {
                return Err(Error::Shape(format!("stale MLP cache at layer {i}")));
            }
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let input = &cache.values[i];
            let g = &mut grads.layers[i];
            g.weight.add_outer(&delta, input);
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += d;
            }
            let mut prev = vec![0.0; layer.weight.cols()];
            layer.weight.matvec_t_acc(&delta, &mut prev);
            delta = prev;
        }
        Ok(delta)
    }

    pub fn for_each_slice(&self, f: &mut impl FnMut(&[f64])) {
        for l in &self.layers {
            f(l.weight.data());
            f(&l.bias);
        }
    }

    pub fn for_each_slice_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(l.weight.data_mut());
            f(&mut l.bias);
        }
    }
}
