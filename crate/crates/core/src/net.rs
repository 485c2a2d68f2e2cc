//! Minimal dense feed-forward network with hand-written reverse-mode
//! gradients. Weight matrices are stored row-major (`out x in`).

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    /// Smooth activations are allowed on hidden layers.
    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Sigmoid)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        write!(f, "{tag}")
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidParams(format!("unknown activation {other:?}"))),
        }
    }
}

/// Per-layer parameters: `weight` is row-major `rows x cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Cached forward pass used by the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Layer inputs: `inputs[0]` is the network input, `inputs[i]` the
    /// post-activation of layer `i - 1`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pub pres: Vec<Vec<f64>>,
    /// Network output (post-activation of the last layer).
    pub output: Vec<f64>,
}

/// Gradients with the same shapes as the network layers.
#[derive(Clone, Debug)]
pub struct NetGradient {
    pub layers: Vec<Layer>,
    /// Gradient with respect to the network input.
    pub input: Vec<f64>,
}

impl NetGradient {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &NetGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for x in &mut l.weight {
                *x *= s;
            }
            for x in &mut l.bias {
                *x *= s;
            }
        }
    }
}

/// Dense feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl DenseNet {
    /// Zero-initialized network.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Seeded symmetric initialization: uniform in `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn seeded<R: Rng>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden_activation, output_activation)?;
        for layer in &mut net.layers {
            let s = (6.0 / (layer.cols + layer.rows) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.random_range(-s..s);
            }
            // biases stay zero
        }
        Ok(net)
    }

    /// Rebuilds a network from serialized parts.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        Self::validate_sizes(&layer_sizes)?;
        let n = layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::InvalidParams(format!(
                "expected {n} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for (i, (weight, bias)) in weights.into_iter().zip(biases).enumerate() {
            let rows = layer_sizes[i + 1];
            let cols = layer_sizes[i];
            if weight.len() != rows * cols || bias.len() != rows {
                return Err(Error::InvalidParams(format!(
                    "layer {i} shape mismatch: weight {} != {rows}x{cols} or bias {} != {rows}",
                    weight.len(),
                    bias.len()
                )));
            }
            layers.push(Layer {
                rows,
                cols,
                weight,
                bias,
            });
        }
        Ok(Self {
            layer_sizes,
            layers,
            hidden_activation,
            output_activation,
        })
    }

    fn validate_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParams(
                "layer_sizes must list at least input and output widths".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParams("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn activation_for(&self, layer_index: usize) -> Activation {
        if layer_index + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    /// Forward pass that caches everything the backward pass needs.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.rows);
            layer.affine(&current, &mut pre);
            let act = self.activation_for(i);
            let post: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            inputs.push(current);
            pres.push(pre);
            current = post;
        }
        Ok(Trace {
            inputs,
            pres,
            output: current,
        })
    }

    /// Reverse-mode pass: given `d loss / d output`, produces parameter
    /// gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64]) -> NetGradient {
        debug_assert_eq!(output_grad.len(), self.output_dim());
        let mut grad = NetGradient::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = self.activation_for(i);
            let pre = &trace.pres[i];
            let input = &trace.inputs[i];
            // delta = upstream ⊙ act'(pre)
            let delta: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * act.derivative(p))
                .collect();
            let g_layer = &mut grad.layers[i];
            for r in 0..layer.rows {
                let d = delta[r];
                g_layer.bias[r] = d;
                let row = &mut g_layer.weight[r * layer.cols..(r + 1) * layer.cols];
                for (slot, x) in row.iter_mut().zip(input) {
                    *slot = d * x;
                }
            }
            // downstream = W^T delta
            let mut downstream = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let d = delta[r];
                let row = &layer.weight[r * layer.cols..(r + 1) * layer.cols];
                for (slot, w) in downstream.iter_mut().zip(row) {
                    *slot += w * d;
                }
            }
            upstream = downstream;
        }
        grad.input = upstream;
        grad
    }

    /// Gradient-descent step `w -= lr * g`.
    pub fn apply_gradient(&mut self, grad: &NetGradient, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in layer.weight.iter_mut().zip(&g.weight) {
                *w -= lr * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameter access, weights before biases within each layer.
    pub fn param(&self, index: usize) -> f64 {
        let (l, off, is_bias) = self.locate(index);
        if is_bias {
            self.layers[l].bias[off]
        } else {
            self.layers[l].weight[off]
        }
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let (l, off, is_bias) = self.locate(index);
        if is_bias {
            &mut self.layers[l].bias[off]
        } else {
            &mut self.layers[l].weight[off]
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize, bool) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.weight.len() {
                return (l, index, false);
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                return (l, index, true);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Gradient read-out in the same flat order as [`DenseNet::param`].
    pub fn flat_gradient(grad: &NetGradient) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &grad.layers {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}
