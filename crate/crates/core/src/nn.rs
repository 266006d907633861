//! Small fully connected networks with exact per-sample gradients.
//!
//! Parameters live in one flat vector. Layer `l` maps `widths[l]` inputs to
//! `widths[l+1]` outputs and owns a row-major `out × in` weight block followed
//! by `out` biases. Hidden layers apply the activation; the output layer is
//! linear and feeds the loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::GradientBatch;
use crate::error::{check_dim, Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

impl ArchSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        let arch = Self {
            layer_widths,
            activation,
            loss,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("architecture needs at least an input and an output layer"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated arch")
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        let mut offset = 0;
        self.layer_widths.windows(2).map(move |w| {
            let shape = LayerShape {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            shape
        })
    }
}

/// Weights plus biases over all layers.
pub fn param_count(arch: &ArchSpec) -> usize {
    arch.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchSpec,
    weights: Vec<f64>,
}

impl Model {
    pub fn new(arch: ArchSpec, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_dim("model weights", arch.param_count(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let d = arch.param_count();
        Self::new(arch, vec![0.0; d])
    }

    /// Uniform in `±1/sqrt(fan_in)` for every weight and bias of a layer.
    pub fn init<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut weights = Vec::with_capacity(arch.param_count());
        for layer in arch.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for _ in 0..layer.weight_len() + layer.fan_out {
                weights.push(rng.random_range(-bound..=bound));
            }
        }
        Self::new(arch, weights)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), weights)
    }

    /// Network output (logits for cross-entropy) for one input.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_dim("sample features", self.arch.input_dim(), features.len())?;
        let trace = self.forward_trace(features);
        Ok(trace.acts.last().cloned().unwrap_or_default())
    }

    fn forward_trace(&self, features: &[f64]) -> Trace {
        let n_layers = self.arch.layer_widths.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(features.to_vec());
        for (l, layer) in self.arch.layers().enumerate() {
            let input = &acts[l];
            let w = &self.weights[layer.offset..layer.offset + layer.weight_len()];
            let b = &self.weights[layer.offset + layer.weight_len()..][..layer.fan_out];
            let z: Vec<f64> = w
                .chunks_exact(layer.fan_in)
                .zip(b)
                .map(|(row, &bias)| bias + dot(row, input))
                .collect();
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.arch.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Trace { pre, acts }
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        check_dim("sample features", self.arch.input_dim(), sample.features.len())?;
        if self.arch.loss == LossKind::CrossEntropy && sample.label >= self.arch.output_dim() {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                sample.label,
                self.arch.output_dim()
            )));
        }
        Ok(())
    }

    /// Loss and its gradient with respect to the network output.
    fn loss_and_output_grad(&self, output: &[f64], label: usize) -> (f64, Vec<f64>) {
        match self.arch.loss {
            LossKind::CrossEntropy => {
                let probs = softmax(output);
                let loss = -probs[label].max(PROB_FLOOR).ln();
                let mut grad = probs;
                grad[label] -= 1.0;
                (loss, grad)
            }
            LossKind::SquaredError => {
                let target = squared_error_target(output.len(), label);
                let diff: Vec<f64> = output.iter().zip(&target).map(|(o, t)| o - t).collect();
                let loss = diff.iter().map(|d| d * d).sum();
                (loss, diff.iter().map(|d| 2.0 * d).collect())
            }
        }
    }

    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let trace = self.forward_trace(&sample.features);
        let output = trace.acts.last().expect("output layer");
        Ok(self.loss_and_output_grad(output, sample.label).0)
    }

    /// Backpropagate one sample, writing the gradient into `grad`.
    fn sample_gradient_into(&self, sample: &Sample, grad: &mut [f64]) -> f64 {
        let trace = self.forward_trace(&sample.features);
        let (loss, mut delta) =
            self.loss_and_output_grad(trace.acts.last().expect("output layer"), sample.label);
        let layers: Vec<LayerShape> = self.arch.layers().collect();
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &trace.acts[l];
            let (gw, rest) = grad[layer.offset..].split_at_mut(layer.weight_len());
            let gb = &mut rest[..layer.fan_out];
            for (o, &dz) in delta.iter().enumerate() {
                gb[o] = dz;
                for (g, &x) in gw[o * layer.fan_in..(o + 1) * layer.fan_in].iter_mut().zip(input) {
                    *g = dz * x;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[layer.offset..layer.offset + layer.weight_len()];
            let prev_pre = &trace.pre[l - 1];
            let prev_act = &trace.acts[l];
            let mut next = vec![0.0; layer.fan_in];
            for (o, &dz) in delta.iter().enumerate() {
                for (n, &wv) in next.iter_mut().zip(&w[o * layer.fan_in..(o + 1) * layer.fan_in]) {
                    *n += wv * dz;
                }
            }
            for (i, n) in next.iter_mut().enumerate() {
                *n *= self.arch.activation.derivative(prev_pre[i], prev_act[i]);
            }
            delta = next;
        }
        loss
    }
}

struct Trace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One-hot encoding of the label, or the label itself for a single output.
pub(crate) fn squared_error_target(width: usize, label: usize) -> Vec<f64> {
    if width == 1 {
        vec![label as f64]
    } else {
        (0..width).map(|j| if j == label { 1.0 } else { 0.0 }).collect()
    }
}

pub fn per_sample_losses(model: &Model, batch: &[Sample]) -> Result<Vec<f64>> {
    batch.iter().map(|s| model.sample_loss(s)).collect()
}

pub fn mean_loss(model: &Model, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("mean loss over an empty batch"));
    }
    Ok(per_sample_losses(model, batch)?.iter().sum::<f64>() / batch.len() as f64)
}

pub fn per_sample_gradients(model: &Model, batch: &[Sample]) -> Result<GradientBatch> {
    let d = model.dim();
    let mut out = GradientBatch::empty(d);
    let mut buf = vec![0.0; d];
    for sample in batch {
        out.push(sample_gradient(model, sample, &mut buf)?)?;
    }
    Ok(out)
}

/// Gradient of one sample. `buf` is scratch of length `d`.
pub fn sample_gradient<'a>(model: &Model, sample: &Sample, buf: &'a mut [f64]) -> Result<&'a [f64]> {
    model.check_sample(sample)?;
    check_dim("gradient buffer", model.dim(), buf.len())?;
    model.sample_gradient_into(sample, buf);
    if buf.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("per-sample gradient"));
    }
    Ok(buf)
}

/// Gradient of the mean loss over `batch`.
pub fn full_gradient(model: &Model, batch: &[Sample]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient over an empty batch"));
    }
    Ok(per_sample_gradients(model, batch)?.mean())
}

/// `w - eta * direction`, leaving `model` untouched.
pub fn apply_update(model: &Model, direction: &[f64], eta: f64) -> Result<Model> {
    check_dim("update direction", model.dim(), direction.len())?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive, got {eta}")));
    }
    let weights = model
        .weights
        .iter()
        .zip(direction)
        .map(|(w, g)| w - eta * g)
        .collect();
    model.with_weights(weights)
}
