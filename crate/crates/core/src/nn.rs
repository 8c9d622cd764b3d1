//! Dense ReLU networks with hand-written backpropagation, softmax losses and
//! momentum SGD.
//!
//! All parameters of a model live in one flat [`ParamVector`]. Layer `i`
//! contributes a row-major `[out, in]` weight block followed by an `[out]`
//! bias block, so aggregation, drift and checkpointing work on plain slices.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout(Vec<LayerShape>);

impl Layout {
    pub fn new(layers: Vec<LayerShape>) -> Self {
        Layout(layers)
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.0
    }

    pub fn numel(&self) -> usize {
        self.0.iter().map(LayerShape::numel).sum()
    }
}

/// Flat model parameters plus the layout describing how they map onto layers.
///
/// The layout is shared behind an `Arc`, so cloning a vector only copies the
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.numel() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                layout.numel()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.numel()],
            layout,
        }
    }

    /// Builds a vector with a single unnamed layer; handy for scalar toys.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::new(vec![LayerShape {
            name: "flat".into(),
            shape: vec![values.len()],
        }]));
        ParamVector { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{} parameters vs {} parameters",
                self.len(),
                other.len()
            )))
        }
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Fully connected network: ReLU on hidden layers, linear logits at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: ParamVector,
}

/// Activations recorded by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[i]` is the input to layer `i`; the last entry holds the logits.
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("tape always holds logits")
    }
}

fn mlp_layout(dims: &[usize]) -> Layout {
    let mut layers = Vec::with_capacity(2 * (dims.len() - 1));
    for (i, w) in dims.windows(2).enumerate() {
        layers.push(LayerShape {
            name: format!("dense{i}.weight"),
            shape: vec![w[1], w[0]],
        });
        layers.push(LayerShape {
            name: format!("dense{i}.bias"),
            shape: vec![w[1]],
        });
    }
    Layout::new(layers)
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Mlp::zeros(dims)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut model.params.values[offset..offset + fan_in * fan_out] {
                *v = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "network needs at least input and output widths, all positive; got {dims:?}"
            )));
        }
        let layout = Arc::new(mlp_layout(dims));
        Ok(Mlp {
            dims: dims.to_vec(),
            params: ParamVector::zeros(layout),
        })
    }

    /// Rebuilds a model from parameters whose layout follows the dense layer
    /// naming produced by this type.
    pub fn from_params(params: ParamVector) -> Result<Self> {
        let layers = params.layout().layers();
        if layers.is_empty() || !layers.len().is_multiple_of(2) {
            return Err(Error::Shape("layout is not a dense stack".into()));
        }
        let mut dims = Vec::new();
        for pair in layers.chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.shape.len() != 2 || b.shape != [w.shape[0]] {
                return Err(Error::Shape(format!("bad dense layer {}", w.name)));
            }
            if dims.is_empty() {
                dims.push(w.shape[1]);
            } else if *dims.last().unwrap() != w.shape[1] {
                return Err(Error::Shape(format!("width mismatch at {}", w.name)));
            }
            dims.push(w.shape[0]);
        }
        let mut model = Mlp::zeros(&dims)?;
        model.set_params(params)?;
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.params.layout()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        // Keep our own Arc so every copy of the model shares one layout.
        self.params.values = params.values;
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x)?.activations.pop().unwrap())
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<Tape> {
        self.check_input(x)?;
        let p = &self.params.values;
        let layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for (i, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &p[offset..offset + fan_in * fan_out];
            let bias = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let input = &activations[i];
            let mut out: Vec<f64> = weights
                .chunks_exact(fan_in)
                .zip(bias)
                .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if i + 1 < layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            activations.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Tape { activations })
    }

    /// Backpropagates `dlogits`, adding `scale * dL/dθ` into `grad_acc` and
    /// returning `dL/dx`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        dlogits: &[f64],
        grad_acc: &mut [f64],
        scale: f64,
    ) -> Vec<f64> {
        self.backward(tape, dlogits, Some((grad_acc, scale)))
    }

    fn backward(
        &self,
        tape: &Tape,
        dlogits: &[f64],
        mut grad_acc: Option<(&mut [f64], f64)>,
    ) -> Vec<f64> {
        let p = &self.params.values;
        let layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = dlogits.to_vec();
        for i in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
            let off = offsets[i];
            let input = &tape.activations[i];
            if let Some((acc, scale)) = grad_acc.as_mut() {
                let (gw, rest) = acc[off..].split_at_mut(fan_in * fan_out);
                let gb = &mut rest[..fan_out];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = *scale * d;
                    gb[o] += sd;
                    for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                        *g += sd * x;
                    }
                }
            }
            let weights = &p[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (acc, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *acc += d * w;
                }
            }
            if i > 0 {
                // ReLU mask from the stored post-activation values.
                for (g, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Gradient of the loss only with respect to the input.
    pub fn input_grad(&self, tape: &Tape, dlogits: &[f64]) -> Vec<f64> {
        self.backward(tape, dlogits, None)
    }

    /// Softmax cross-entropy loss with gradients for parameters and input.
    pub fn loss_and_grads(&self, x: &[f64], y: usize) -> Result<(f64, ParamVector, Vec<f64>)> {
        let tape = self.forward_tape(x)?;
        let (loss, dlogits) = cross_entropy(tape.logits(), y)?;
        let mut grads = self.params.zeros_like();
        let input_grad = self.backward_into(&tape, &dlogits, &mut grads.values, 1.0);
        Ok((loss, grads, input_grad))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - m - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    if y >= logits.len() {
        return Err(Error::Label {
            label: y,
            classes: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // (m - z_y) >= 0 and ln(sum) >= 0, so the loss never dips below zero.
    let loss = (m - logits[y]) + sum.ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    Ok((loss, grad))
}

/// `KL(softmax(p_logits) || softmax(q_logits))` with gradients with respect
/// to both logit vectors.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let log_p = log_softmax(p_logits);
    let log_q = log_softmax(q_logits);
    let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
    let diff: Vec<f64> = log_p.iter().zip(&log_q).map(|(a, b)| a - b).collect();
    let kl: f64 = p.iter().zip(&diff).map(|(p, d)| p * d).sum();
    let grad_p = p.iter().zip(&diff).map(|(p, d)| p * (d - kl)).collect();
    let grad_q = q.iter().zip(&p).map(|(q, p)| q - p).collect();
    (kl.max(0.0), grad_p, grad_q)
}

/// Momentum SGD with L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} < 0", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    pub velocity: ParamVector,
}

impl SgdState {
    pub fn new(config: SgdConfig, layout: Arc<Layout>) -> Self {
        SgdState {
            config,
            velocity: ParamVector::zeros(layout),
        }
    }
}

/// `v <- momentum * v + g + wd * θ`, then `θ <- θ - lr * v`.
pub fn sgd_step(model: &mut Mlp, grads: &ParamVector, state: &mut SgdState) -> Result<()> {
    model.params.check_layout(grads)?;
    model.params.check_layout(&state.velocity)?;
    let SgdConfig {
        lr,
        momentum,
        weight_decay,
    } = state.config;
    for ((theta, v), g) in model
        .params
        .values
        .iter_mut()
        .zip(state.velocity.values.iter_mut())
        .zip(&grads.values)
    {
        *v = momentum * *v + g + weight_decay * *theta;
        *theta -= lr * *v;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FSLK";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes `params` in the checkpoint format: magic, version, layer table
/// (name length, name, rank, dims), then row-major little-endian `f64`s.
pub fn write_checkpoint<W: Write>(params: &ParamVector, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let layers = params.layout().layers();
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        w.write_all(&(layer.name.len() as u32).to_le_bytes())?;
        w.write_all(layer.name.as_bytes())?;
        w.write_all(&(layer.shape.len() as u32).to_le_bytes())?;
        for &d in &layer.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamVector> {
    fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(u32::from_le_bytes(b))
    }
    fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(u64::from_le_bytes(b))
    }

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerShape { name, shape });
    }
    let layout = Arc::new(Layout::new(layers));
    let values = (0..layout.numel())
        .map(|_| read_u64(&mut r).map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    ParamVector::new(values, layout)
}
