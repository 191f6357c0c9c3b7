//! Dense feed-forward ReLU networks with reverse-mode gradients and Adam.
//!
//! Hidden layers use ReLU, the output layer is affine. Weight matrices are
//! stored row-major with shape `(outputs, inputs)`. The ReLU derivative at
//! exactly zero is taken to be zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One affine map `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    /// Builds a layer from a row-major `outputs x inputs` weight buffer.
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::InvalidLayerSizes(format!(
                "layer must have positive fan-in and fan-out, got {inputs}->{outputs}"
            )));
        }
        check_dim("layer weights", inputs * outputs, weights.len())?;
        check_dim("layer bias", outputs, bias.len())?;
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    /// Builds a layer from nested rows.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let outputs = rows.len();
        let inputs = rows.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(inputs * outputs);
        for row in rows {
            check_dim("weight row", inputs, row.len())?;
            weights.extend_from_slice(row);
        }
        Self::new(inputs, outputs, weights, bias)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Fully connected ReLU network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Chains the given layers, checking that consecutive dimensions agree.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidLayerSizes("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Self { layers })
    }

    /// He-initialized network (normal with std `sqrt(2 / fan_in)`, zero
    /// biases). Deterministic per seed.
    pub fn init_random(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = libm::sqrt(2.0 / fan_in as f64);
                let normal = Normal::new(0.0, std).expect("positive std");
                let weights = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// All-zero network of the given shape.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::new(w[0], w[1], vec![0.0; w[0] * w[1]], vec![0.0; w[1]]))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.layers.len() + 1);
        sizes.push(self.input_dim());
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Copies parameters from a network of identical shape.
    pub fn copy_from(&mut self, other: &Mlp) -> Result<()> {
        if self.layer_sizes() != other.layer_sizes() {
            return Err(Error::DimensionMismatch {
                context: "copy_from",
                expected: self.parameter_count(),
                found: other.parameter_count(),
            });
        }
        self.layers.clone_from(&other.layers);
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("forward input", self.input_dim(), x.len())?;
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        Ok(tape.activations.pop().unwrap_or_default())
    }

    /// Runs the network and keeps every layer's activation for a later
    /// [`Mlp::backward_tape`]. Panics if `x` has the wrong length.
    pub fn forward_tape<'t>(&self, x: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        assert_eq!(x.len(), self.input_dim(), "forward input dimension");
        tape.activations.resize_with(self.layers.len() + 1, Vec::new);
        tape.activations[0].clear();
        tape.activations[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = tape.activations.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.apply(&done[l], out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        &tape.activations[self.layers.len()]
    }

    /// Gradients of `output . grad_out` with respect to every parameter.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<Gradients> {
        check_dim("backward input", self.input_dim(), x.len())?;
        check_dim("backward grad_out", self.output_dim(), grad_out.len())?;
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        let mut grads = Gradients::zeros_like(self);
        self.backward_tape(&mut tape, grad_out, &mut grads);
        Ok(grads)
    }

    /// Accumulates (adds) gradients for the sample last recorded on `tape`.
    pub fn backward_tape(&self, tape: &mut Tape, grad_out: &[f64], grads: &mut Gradients) {
        assert_eq!(grad_out.len(), self.output_dim(), "grad_out dimension");
        let Tape {
            activations,
            delta,
            scratch,
        } = tape;
        delta.clear();
        delta.extend_from_slice(grad_out);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &activations[l];
            let g = &mut grads.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.inputs..(r + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
            }
            if l == 0 {
                break;
            }
            scratch.clear();
            scratch.resize(layer.inputs, 0.0);
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                scratch.iter_mut().zip(layer.row(r)).for_each(|(s, w)| *s += w * d);
            }
            // input holds post-ReLU values: zero exactly when the pre-activation was <= 0
            scratch.iter_mut().zip(input).for_each(|(s, &a)| {
                if a <= 0.0 {
                    *s = 0.0
                }
            });
            core::mem::swap(delta, scratch);
        }
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidLayerSizes(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidLayerSizes(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Reusable activation buffers for training passes.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    scratch: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter-shaped buffer, used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

/// Mean of squared componentwise differences.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_dim("loss_mse", pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam moment accumulators for one network.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `net` against `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) || !self.first.matches(net) {
            return Err(Error::DimensionMismatch {
                context: "adam_step",
                expected: net.parameter_count(),
                found: grads.values().count(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let correct1 = 1.0 - libm::pow(beta1, t);
        let correct2 = 1.0 - libm::pow(beta2, t);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.first.layers[l];
            let v = &mut self.second.layers[l];
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / correct1;
                let v_hat = *vi / correct2;
                *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
            }
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("parameters after adam step"));
        }
        Ok(())
    }
}
