//! Minimal trainable neural networks: dense and 2-D convolutional layers,
//! ReLU, flatten, and a sigmoid output head, with from-scratch
//! backpropagation and seeded minibatch SGD.
//!
//! Models here are deliberately tiny and self-contained: the meta-classifier
//! attack consumes raw parameters, and reproducible victim pools require
//! control over every float. Convolutions use valid padding and stride 1.
//! Weight layout is part of the model-file contract: dense weights are
//! row-major `(output, input)`, convolution kernels are row-major
//! `(k1, k2, c_in, c_out)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthdata::Record;
use crate::util::mix64;

const TAG_LAYER_INIT: u64 = 0x6c79_7269;
const TAG_EPOCH: u64 = 0x6570_6f63;

/// Probability clamp for the cross-entropy loss value.
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("incompatible architecture: {0}")]
    IncompatibleArch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged to a non-finite parameter at epoch {epoch}, batch {batch}")]
    NumericalDivergence { epoch: u32, batch: usize },
    #[error("layer {0} is not a ReLU layer")]
    BadLayerIndex(usize),
    #[error("malformed model document: {0}")]
    MalformedDocument(String),
    #[error("cannot evaluate accuracy on an empty record slice")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    #[serde(rename = "conv2d")]
    Conv2D { k1: usize, k2: usize, c_in: usize, c_out: usize },
    Relu,
    Flatten,
    SigmoidOutput,
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2D { .. })
    }
}

/// Weights and bias of one parameterized layer (also used as a gradient
/// container, which is why it is shape-free).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    #[serde(rename = "w")]
    pub weights: Vec<f64>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub arch: Vec<LayerSpec>,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Vector(usize),
    Image { c: usize, h: usize, w: usize },
}

impl Shape {
    fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Image { c, h, w } => c * h * w,
        }
    }
}

#[derive(Debug, Clone)]
struct Value {
    data: Vec<f64>,
    shape: Shape,
}

/// Symbolic shape during architecture validation; spatial extents are only
/// known once a concrete input arrives.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SymShape {
    Unknown,
    Vector(Option<usize>),
    Image { c: usize },
}

pub fn validate_arch(arch: &[LayerSpec]) -> Result<(), NetError> {
    if arch.is_empty() {
        return Err(NetError::IncompatibleArch("empty architecture".into()));
    }
    if arch.last() != Some(&LayerSpec::SigmoidOutput) {
        return Err(NetError::IncompatibleArch(
            "last layer must be sigmoid_output".into(),
        ));
    }
    let mut shape = SymShape::Unknown;
    for (idx, layer) in arch.iter().enumerate() {
        let err = |msg: String| Err(NetError::IncompatibleArch(format!("layer {idx}: {msg}")));
        shape = match *layer {
            LayerSpec::Dense { input, output } => {
                if input == 0 || output == 0 {
                    return err("dense dimensions must be positive".into());
                }
                match shape {
                    SymShape::Unknown | SymShape::Vector(None) => {}
                    SymShape::Vector(Some(n)) if n == input => {}
                    SymShape::Vector(Some(n)) => {
                        return err(format!("dense expects {input} inputs, previous layer yields {n}"))
                    }
                    SymShape::Image { .. } => {
                        return err("dense cannot consume an image; insert flatten".into())
                    }
                }
                SymShape::Vector(Some(output))
            }
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => {
                if k1 == 0 || k2 == 0 || c_in == 0 || c_out == 0 {
                    return err("conv dimensions must be positive".into());
                }
                match shape {
                    SymShape::Unknown => {}
                    SymShape::Image { c } if c == c_in => {}
                    SymShape::Image { c } => {
                        return err(format!("conv expects {c_in} channels, previous layer yields {c}"))
                    }
                    SymShape::Vector(_) => {
                        return err("conv cannot consume a flat vector".into())
                    }
                }
                SymShape::Image { c: c_out }
            }
            LayerSpec::Relu | LayerSpec::Flatten if idx == 0 => {
                return err("first layer must be dense or conv2d".into())
            }
            LayerSpec::Relu => shape,
            LayerSpec::Flatten => match shape {
                SymShape::Image { .. } => SymShape::Vector(None),
                _ => return err("flatten expects an image".into()),
            },
            LayerSpec::SigmoidOutput => {
                if idx + 1 != arch.len() {
                    return err("sigmoid_output must be the last layer".into());
                }
                match shape {
                    SymShape::Vector(Some(1)) | SymShape::Vector(None) => shape,
                    _ => return err("sigmoid_output expects a single logit".into()),
                }
            }
        };
    }
    Ok(())
}

fn param_shapes(arch: &[LayerSpec]) -> Vec<(usize, usize)> {
    arch.iter()
        .filter_map(|l| match *l {
            LayerSpec::Dense { input, output } => Some((output * input, output)),
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => Some((k1 * k2 * c_in * c_out, c_out)),
            _ => None,
        })
        .collect()
}

/// Glorot-style uniform initialization: weights from
/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero.
pub fn init(arch: &[LayerSpec], seed: u64) -> Result<NetParams, NetError> {
    validate_arch(arch)?;
    let mut layers = Vec::new();
    let mut param_idx = 0u64;
    for spec in arch {
        let (n_weights, n_bias, fan_in) = match *spec {
            LayerSpec::Dense { input, output } => (input * output, output, input),
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => {
                (k1 * k2 * c_in * c_out, c_out, k1 * k2 * c_in)
            }
            _ => continue,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[seed, TAG_LAYER_INIT, param_idx]));
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = (0..n_weights)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        layers.push(LayerParams {
            weights,
            bias: vec![0.0; n_bias],
        });
        param_idx += 1;
    }
    Ok(NetParams {
        arch: arch.to_vec(),
        layers,
    })
}

fn input_value(net: &NetParams, features: &[f64]) -> Result<Value, NetError> {
    match net.arch.first() {
        Some(LayerSpec::Conv2D { c_in, .. }) => {
            // A flat record feeding a convolutional net is interpreted as a
            // square image with c_in channels.
            let per_channel = features.len() / c_in;
            let side = (per_channel as f64).sqrt().round() as usize;
            if side * side * c_in != features.len() || side == 0 {
                return Err(NetError::ShapeMismatch(format!(
                    "input of length {} is not a square {c_in}-channel image",
                    features.len()
                )));
            }
            Ok(Value {
                data: features.to_vec(),
                shape: Shape::Image { c: *c_in, h: side, w: side },
            })
        }
        _ => Ok(Value {
            data: features.to_vec(),
            shape: Shape::Vector(features.len()),
        }),
    }
}

/// Runs the network, returning the value produced by every layer;
/// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
fn forward_cached(net: &NetParams, input: Value) -> Result<Vec<Value>, NetError> {
    let mut values = Vec::with_capacity(net.arch.len() + 1);
    values.push(input);
    let mut param_idx = 0;
    for (idx, layer) in net.arch.iter().enumerate() {
        let current = values.last().unwrap();
        let next = match *layer {
            LayerSpec::Dense { input, output } => {
                let Shape::Vector(n) = current.shape else {
                    return Err(NetError::ShapeMismatch(format!(
                        "layer {idx}: dense applied to an image"
                    )));
                };
                if n != input {
                    return Err(NetError::ShapeMismatch(format!(
                        "layer {idx}: dense expects {input} inputs, got {n}"
                    )));
                }
                let params = &net.layers[param_idx];
                param_idx += 1;
                let mut out = params.bias.clone();
                for (o, out_v) in out.iter_mut().enumerate() {
                    let row = &params.weights[o * input..(o + 1) * input];
                    *out_v += row
                        .iter()
                        .zip(&current.data)
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                }
                Value {
                    data: out,
                    shape: Shape::Vector(output),
                }
            }
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => {
                let Shape::Image { c, h, w } = current.shape else {
                    return Err(NetError::ShapeMismatch(format!(
                        "layer {idx}: conv applied to a flat vector"
                    )));
                };
                if c != c_in || h < k1 || w < k2 {
                    return Err(NetError::ShapeMismatch(format!(
                        "layer {idx}: conv {k1}x{k2}x{c_in} cannot consume a {c}x{h}x{w} image"
                    )));
                }
                let params = &net.layers[param_idx];
                param_idx += 1;
                let (oh, ow) = (h - k1 + 1, w - k2 + 1);
                let mut out = vec![0.0; c_out * oh * ow];
                for co in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = params.bias[co];
                            for ci in 0..c_in {
                                for i1 in 0..k1 {
                                    for i2 in 0..k2 {
                                        let kidx = ((i1 * k2 + i2) * c_in + ci) * c_out + co;
                                        let iidx = (ci * h + oy + i1) * w + ox + i2;
                                        s += params.weights[kidx] * current.data[iidx];
                                    }
                                }
                            }
                            out[(co * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                Value {
                    data: out,
                    shape: Shape::Image { c: c_out, h: oh, w: ow },
                }
            }
            LayerSpec::Relu => Value {
                data: current.data.iter().map(|&v| v.max(0.0)).collect(),
                shape: current.shape,
            },
            LayerSpec::Flatten => Value {
                data: current.data.clone(),
                shape: Shape::Vector(current.shape.len()),
            },
            LayerSpec::SigmoidOutput => {
                if current.shape.len() != 1 {
                    return Err(NetError::ShapeMismatch(format!(
                        "layer {idx}: sigmoid_output expects one logit, got {}",
                        current.shape.len()
                    )));
                }
                Value {
                    data: vec![sigmoid(current.data[0])],
                    shape: Shape::Vector(1),
                }
            }
        };
        values.push(next);
    }
    Ok(values)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability that the label is 1 for the given feature vector.
pub fn forward(net: &NetParams, features: &[f64]) -> Result<f64, NetError> {
    let values = forward_cached(net, input_value(net, features)?)?;
    Ok(values.last().unwrap().data[0])
}

/// Post-activation vector after ReLU layer `upto_layer` (flattened for
/// convolutional shapes).
pub fn activations(net: &NetParams, features: &[f64], upto_layer: usize) -> Result<Vec<f64>, NetError> {
    if net.arch.get(upto_layer) != Some(&LayerSpec::Relu) {
        return Err(NetError::BadLayerIndex(upto_layer));
    }
    let values = forward_cached(net, input_value(net, features)?)?;
    Ok(values[upto_layer + 1].data.clone())
}

/// Fraction of records whose thresholded prediction matches the label; a
/// probability of exactly 0.5 predicts label 1.
pub fn accuracy(net: &NetParams, records: &[Record]) -> Result<f64, NetError> {
    if records.is_empty() {
        return Err(NetError::EmptyEvaluation);
    }
    let mut correct = 0usize;
    for r in records {
        let p = forward(net, &r.features)?;
        correct += usize::from((p >= 0.5) == r.label);
    }
    Ok(correct as f64 / records.len() as f64)
}

fn clamped_bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn zero_grads(net: &NetParams) -> Vec<LayerParams> {
    param_shapes(&net.arch)
        .iter()
        .map(|&(w, b)| LayerParams {
            weights: vec![0.0; w],
            bias: vec![0.0; b],
        })
        .collect()
}

/// Accumulates the loss gradient of one record into `grads`; returns the
/// record's loss.
fn backward_record(
    net: &NetParams,
    record: &Record,
    grads: &mut [LayerParams],
) -> Result<f64, NetError> {
    let values = forward_cached(net, input_value(net, &record.features)?)?;
    let p = values.last().unwrap().data[0];
    let y = f64::from(record.label);
    let loss = clamped_bce(p, record.label);

    // Gradient wrt the logit feeding the sigmoid head.
    let mut grad = vec![p - y];
    let mut param_idx = net.layers.len();
    for (idx, layer) in net.arch.iter().enumerate().rev() {
        let input = &values[idx];
        grad = match *layer {
            LayerSpec::SigmoidOutput => grad,
            LayerSpec::Relu => grad
                .iter()
                .zip(&input.data)
                .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::Flatten => grad,
            LayerSpec::Dense { input: n_in, .. } => {
                param_idx -= 1;
                let params = &net.layers[param_idx];
                let g = &mut grads[param_idx];
                let mut grad_in = vec![0.0; n_in];
                for (o, &go) in grad.iter().enumerate() {
                    g.bias[o] += go;
                    let row = &params.weights[o * n_in..(o + 1) * n_in];
                    let grow = &mut g.weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += go * input.data[i];
                        grad_in[i] += row[i] * go;
                    }
                }
                grad_in
            }
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => {
                param_idx -= 1;
                let params = &net.layers[param_idx];
                let g = &mut grads[param_idx];
                let Shape::Image { h, w, .. } = input.shape else {
                    unreachable!("validated during forward");
                };
                let (oh, ow) = (h - k1 + 1, w - k2 + 1);
                let mut grad_in = vec![0.0; input.data.len()];
                for co in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = grad[(co * oh + oy) * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            g.bias[co] += go;
                            for ci in 0..c_in {
                                for i1 in 0..k1 {
                                    for i2 in 0..k2 {
                                        let kidx = ((i1 * k2 + i2) * c_in + ci) * c_out + co;
                                        let iidx = (ci * h + oy + i1) * w + ox + i2;
                                        g.weights[kidx] += go * input.data[iidx];
                                        grad_in[iidx] += params.weights[kidx] * go;
                                    }
                                }
                            }
                        }
                    }
                }
                grad_in
            }
        };
    }
    Ok(loss)
}

/// Mean cross-entropy loss and its gradient over a record batch.
pub fn loss_and_gradients(
    net: &NetParams,
    records: &[Record],
) -> Result<(f64, Vec<LayerParams>), NetError> {
    if records.is_empty() {
        return Err(NetError::EmptyEvaluation);
    }
    let mut grads = zero_grads(net);
    let mut loss = 0.0;
    for r in records {
        loss += backward_record(net, r, &mut grads)?;
    }
    let scale = 1.0 / records.len() as f64;
    for g in &mut grads {
        g.weights.iter_mut().for_each(|v| *v *= scale);
        g.bias.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grads))
}

/// Mean cross-entropy loss of the network on a record batch.
pub fn loss(net: &NetParams, records: &[Record]) -> Result<f64, NetError> {
    if records.is_empty() {
        return Err(NetError::EmptyEvaluation);
    }
    let mut total = 0.0;
    for r in records {
        total += clamped_bce(forward(net, &r.features)?, r.label);
    }
    Ok(total / records.len() as f64)
}

/// Minibatch SGD with classical momentum on the cross-entropy loss; a fixed
/// epoch count, per-epoch seeded shuffling, no early stopping.
pub fn train(
    net: &NetParams,
    data: &crate::synthdata::Dataset,
    cfg: &TrainConfig,
) -> Result<NetParams, NetError> {
    train_records(net, &data.records, cfg)
}

pub fn train_records(
    net: &NetParams,
    records: &[Record],
    cfg: &TrainConfig,
) -> Result<NetParams, NetError> {
    assert!(cfg.batch_size >= 1, "batch size must be positive");
    if records.is_empty() {
        return Err(NetError::EmptyEvaluation);
    }
    let mut current = net.clone();
    let mut velocity = zero_grads(net);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[cfg.seed, TAG_EPOCH, epoch as u64]));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = zero_grads(&current);
            for &i in batch {
                backward_record(&current, &records[i], &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut finite = true;
            for ((layer, v), g) in current.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for k in 0..layer.weights.len() {
                    v.weights[k] = cfg.momentum * v.weights[k] + g.weights[k] * scale;
                    layer.weights[k] -= cfg.learning_rate * v.weights[k];
                    finite &= layer.weights[k].is_finite();
                }
                for k in 0..layer.bias.len() {
                    v.bias[k] = cfg.momentum * v.bias[k] + g.bias[k] * scale;
                    layer.bias[k] -= cfg.learning_rate * v.bias[k];
                    finite &= layer.bias[k].is_finite();
                }
            }
            if !finite {
                return Err(NetError::NumericalDivergence {
                    epoch,
                    batch: batch_no,
                });
            }
        }
    }
    Ok(current)
}

/// Canonical JSON document for a network; `serialize . deserialize` is exact
/// because floats are emitted with round-trippable precision.
pub fn serialize(net: &NetParams) -> String {
    serde_json::to_string(net).expect("network serialization cannot fail")
}

pub fn deserialize(doc: &str) -> Result<NetParams, NetError> {
    let net: NetParams =
        serde_json::from_str(doc).map_err(|e| NetError::MalformedDocument(e.to_string()))?;
    validate_arch(&net.arch)?;
    let shapes = param_shapes(&net.arch);
    if shapes.len() != net.layers.len() {
        return Err(NetError::ShapeMismatch(format!(
            "architecture has {} parameterized layers, document has {}",
            shapes.len(),
            net.layers.len()
        )));
    }
    for (idx, ((w, b), params)) in shapes.iter().zip(&net.layers).enumerate() {
        if params.weights.len() != *w || params.bias.len() != *b {
            return Err(NetError::ShapeMismatch(format!(
                "parameter block {idx} has {}x{} values, expected {w}x{b}",
                params.weights.len(),
                params.bias.len()
            )));
        }
        if params.weights.iter().chain(&params.bias).any(|v| !v.is_finite()) {
            return Err(NetError::MalformedDocument(format!(
                "parameter block {idx} contains non-finite values"
            )));
        }
    }
    Ok(net)
}

/// Indices of the ReLU layers in an architecture.
pub fn relu_layers(arch: &[LayerSpec]) -> Vec<usize> {
    arch.iter()
        .enumerate()
        .filter_map(|(i, l)| (*l == LayerSpec::Relu).then_some(i))
        .collect()
}
