//! Two-input feed-forward policy network with hand-written backprop.
//!
//! ```text
//! current  -> analyzer A (linear) --+
//!                                   +-> concat -> 3 x leaky ReLU (W_mid)
//! previous -> analyzer B (linear) --+        -> 3 x ReLU (2 W_mid) -> softmax (J)
//! ```
//!
//! All weights and biases live in one flat vector so the optimizer can
//! treat the network as a single parameter slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{JointDistribution, Policy};
use crate::error::{invalid, Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const PROB_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Width of each input state (`H`).
    pub input: usize,
    /// Width of each analyzer layer.
    pub analyzer: usize,
    /// Width of the leaky block; the ReLU block is twice as wide.
    pub hidden: usize,
    /// Number of actions (`J`).
    pub output: usize,
}

impl Widths {
    pub fn full_scale(input: usize, output: usize) -> Self {
        Widths { input, analyzer: 64, hidden: 128, output }
    }

    pub fn test_scale(input: usize, output: usize) -> Self {
        Widths { input, analyzer: 8, hidden: 16, output }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    LeakyRelu,
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    weight_offset: usize,
    bias_offset: usize,
}

pub const LAYER_NAMES: [&str; 9] = [
    "analyzer_current",
    "analyzer_previous",
    "leaky_1",
    "leaky_2",
    "leaky_3",
    "relu_1",
    "relu_2",
    "relu_3",
    "output",
];

fn layer_plan(w: Widths) -> Vec<(usize, usize, Activation)> {
    use Activation::*;
    let wide = 2 * w.hidden;
    vec![
        (w.input, w.analyzer, Linear),
        (w.input, w.analyzer, Linear),
        (2 * w.analyzer, w.hidden, LeakyRelu),
        (w.hidden, w.hidden, LeakyRelu),
        (w.hidden, w.hidden, LeakyRelu),
        (w.hidden, wide, Relu),
        (wide, wide, Relu),
        (wide, wide, Relu),
        (wide, w.output, Softmax),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters {
    pub widths: Widths,
    pub layers: Vec<LayerShape>,
    pub values: Vec<f64>,
}

impl NetworkParameters {
    pub fn zeros(widths: Widths) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for ((inputs, outputs, activation), name) in layer_plan(widths).into_iter().zip(LAYER_NAMES) {
            let weight_offset = offset;
            let bias_offset = offset + inputs * outputs;
            offset = bias_offset + outputs;
            layers.push(LayerShape { name: name.to_string(), inputs, outputs, activation, weight_offset, bias_offset });
        }
        NetworkParameters { widths, layers, values: vec![0.0; offset] }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(widths: Widths, rng: &mut R) -> Self {
        let mut p = Self::zeros(widths);
        for layer in &p.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for v in &mut p.values[layer.weight_offset..layer.bias_offset] {
                *v = rng.gen_range(-limit..=limit);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.values[l.bias_offset..l.bias_offset + l.outputs]
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let l = &self.layers[layer];
        let w = self.weights(layer);
        self.bias(layer)
            .iter()
            .enumerate()
            .map(|(o, b)| b + w[o * l.inputs..(o + 1) * l.inputs].iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }
}

/// Pre- and post-activation vectors of every layer for one input pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub current: Vec<f64>,
    pub previous: Vec<f64>,
    /// Indexed like the layers.
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace has layers")
    }
}

fn activate(a: Activation, z: &[f64]) -> Vec<f64> {
    match a {
        Activation::Linear => z.to_vec(),
        Activation::LeakyRelu => z.iter().map(|&x| if x < 0.0 { LEAKY_SLOPE * x } else { x }).collect(),
        Activation::Relu => z.iter().map(|&x| x.max(0.0)).collect(),
        Activation::Softmax => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
    }
}

fn check_finite(layer: usize, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric { layer, detail: format!("unit {i} is {}", v[i]) }),
    }
}

pub fn forward(params: &NetworkParameters, current: &[f64], previous: &[f64]) -> Result<ForwardTrace> {
    let w = params.widths;
    if current.len() != w.input || previous.len() != w.input {
        return Err(invalid(format!(
            "network expects states of width {}, got {} and {}",
            w.input,
            current.len(),
            previous.len()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len());
    for (i, x) in [current, previous].into_iter().enumerate() {
        let z = params.affine(i, x);
        check_finite(i, &z)?;
        post.push(activate(params.layers[i].activation, &z));
        pre.push(z);
    }
    let mut h: Vec<f64> = post[0].iter().chain(&post[1]).cloned().collect();
    for i in 2..params.layers.len() {
        let z = params.affine(i, &h);
        check_finite(i, &z)?;
        h = activate(params.layers[i].activation, &z);
        pre.push(z);
        post.push(h.clone());
    }
    Ok(ForwardTrace { current: current.to_vec(), previous: previous.to_vec(), pre, post })
}

/// How a weighted target turns into a loss on the output distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-w Σ_j [y_j log p_j + (1 - y_j) log(1 - p_j)]`: every unit is pushed
    /// toward its own target, so raising the chosen action also lowers the
    /// others.
    #[default]
    TwoSided,
    /// `-w log p_chosen`.
    Reinforce,
}

pub fn loss(kind: LossKind, probs: &[f64], target: &[f64], weight: f64) -> f64 {
    let guard = |p: f64| p.clamp(PROB_GUARD, 1.0 - PROB_GUARD);
    match kind {
        LossKind::TwoSided => {
            -weight
                * probs
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| y * guard(p).ln() + (1.0 - y) * (1.0 - guard(p)).ln())
                    .sum::<f64>()
        }
        LossKind::Reinforce => {
            -weight * probs.iter().zip(target).map(|(&p, &y)| y * guard(p).ln()).sum::<f64>()
        }
    }
}

/// Gradient of [`loss`] with respect to every parameter, laid out like
/// `params.values`.
pub fn gradients(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    target: &[f64],
    weight: f64,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    accumulate_gradients(params, trace, target, weight, kind, &mut grad)?;
    Ok(grad)
}

/// Adds the gradient into `grad` in place.
pub fn accumulate_gradients(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    target: &[f64],
    weight: f64,
    kind: LossKind,
    grad: &mut [f64],
) -> Result<()> {
    let probs = trace.output();
    if target.len() != probs.len() || grad.len() != params.len() {
        return Err(invalid("target or gradient buffer has the wrong width"));
    }
    if weight == 0.0 {
        return Ok(());
    }
    let last = params.layers.len() - 1;
    // dL/dz at the softmax logits.
    let mut delta: Vec<f64> = match kind {
        LossKind::TwoSided => {
            let mut g = Vec::with_capacity(probs.len());
            for (&p, &y) in probs.iter().zip(target) {
                let pg = p.clamp(PROB_GUARD, 1.0 - PROB_GUARD);
                if !(pg > 0.0 && pg < 1.0) {
                    return Err(Error::Numeric { layer: last, detail: format!("probability {p} outside (0, 1)") });
                }
                g.push(-weight * (y / pg - (1.0 - y) / (1.0 - pg)));
            }
            let mean: f64 = g.iter().zip(probs).map(|(a, p)| a * p).sum();
            g.iter().zip(probs).map(|(a, p)| p * (a - mean)).collect()
        }
        LossKind::Reinforce => probs.iter().zip(target).map(|(p, y)| -weight * (y - p)).collect(),
    };

    for i in (2..=last).rev() {
        let input: Vec<f64> = if i == 2 {
            trace.post[0].iter().chain(&trace.post[1]).cloned().collect()
        } else {
            trace.post[i - 1].clone()
        };
        delta = backprop_layer(params, i, &input, &delta, grad);
        // `delta` is now dL/d(input of layer i); fold in the previous
        // layer's activation derivative.
        if i > 2 {
            let prev = &params.layers[i - 1];
            apply_activation_grad(prev.activation, &trace.pre[i - 1], &mut delta);
        }
    }
    // Split across the two analyzers (linear activations).
    let a = params.widths.analyzer;
    let (d_cur, d_prev) = delta.split_at(a);
    backprop_layer(params, 0, &trace.current, d_cur, grad);
    backprop_layer(params, 1, &trace.previous, d_prev, grad);
    Ok(())
}

fn apply_activation_grad(a: Activation, z: &[f64], delta: &mut [f64]) {
    match a {
        Activation::Linear | Activation::Softmax => {}
        Activation::LeakyRelu => delta.iter_mut().zip(z).for_each(|(d, &x)| {
            if x < 0.0 {
                *d *= LEAKY_SLOPE
            }
        }),
        Activation::Relu => delta.iter_mut().zip(z).for_each(|(d, &x)| {
            if x <= 0.0 {
                *d = 0.0
            }
        }),
    }
}

/// Accumulates weight/bias gradients for `layer` given dL/dz and returns
/// dL/d(input).
fn backprop_layer(params: &NetworkParameters, layer: usize, input: &[f64], dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let l = &params.layers[layer];
    let w = params.weights(layer);
    let mut d_in = vec![0.0; l.inputs];
    for (o, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = o * l.inputs;
        for (k, &x) in input.iter().enumerate() {
            grad[l.weight_offset + row + k] += d * x;
            d_in[k] += d * w[row + k];
        }
        grad[l.bias_offset + o] += d;
    }
    d_in
}

impl Policy for NetworkParameters {
    fn action_distribution(&self, current: &JointDistribution, previous: &JointDistribution) -> Result<Vec<f64>> {
        Ok(forward(self, current.probs(), previous.probs())?.output().to_vec())
    }
}

/// On-disk form of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub widths: Widths,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &NetworkParameters, seed: u64) -> Self {
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerRecord {
                name: l.name.clone(),
                inputs: l.inputs,
                outputs: l.outputs,
                activation: l.activation,
                weights: params.weights(i).to_vec(),
                bias: params.bias(i).to_vec(),
            })
            .collect();
        Checkpoint { widths: params.widths, seed, layers }
    }

    pub fn to_params(&self) -> Result<NetworkParameters> {
        let mut p = NetworkParameters::zeros(self.widths);
        if self.layers.len() != p.layers.len() {
            return Err(invalid(format!("checkpoint has {} layers, expected {}", self.layers.len(), p.layers.len())));
        }
        for (rec, shape) in self.layers.iter().zip(p.layers.clone()) {
            if rec.name != shape.name
                || rec.inputs != shape.inputs
                || rec.outputs != shape.outputs
                || rec.activation != shape.activation
                || rec.weights.len() != shape.inputs * shape.outputs
                || rec.bias.len() != shape.outputs
            {
                return Err(invalid(format!("layer `{}` does not match the declared widths", rec.name)));
            }
            if rec.weights.iter().chain(&rec.bias).any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer `{}` has non-finite values", rec.name)));
            }
            p.values[shape.weight_offset..shape.bias_offset].copy_from_slice(&rec.weights);
            p.values[shape.bias_offset..shape.bias_offset + shape.outputs].copy_from_slice(&rec.bias);
        }
        Ok(p)
    }
}
