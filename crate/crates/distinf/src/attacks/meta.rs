//! Permutation-invariant meta-classifier over model parameters.
//!
//! Each parameterized layer of the target architecture is viewed as a set of
//! augmented rows: for a dense layer, one row per output neuron (incoming
//! weights plus bias); for a convolutional layer, one flattened kernel slice
//! per output channel. A per-layer map `phi_i` (two linear layers with a ReLU
//! between) transforms every row, the transformed rows are summed into a
//! layer representation `L_i`, and the representation of the previous layer
//! is appended to every row of the next one before `phi` sees it. A head
//! `rho` reads the concatenated layer representations and produces the
//! distribution prediction (sigmoid probability in binary mode, a raw ratio
//! in regression mode).
//!
//! The row sums use compensated summation, so featurization is invariant to
//! row order up to well below 1e-12 even though float addition is not
//! associative.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_flatten, AttackError, ShadowPool};
use crate::nets::{LayerSpec, NetParams};
use crate::util::{mix64, KahanSum};

const TAG_PHI_INIT: u64 = 0x7068_6969;
const TAG_RHO_INIT: u64 = 0x7268_6f69;
const TAG_META_EPOCH: u64 = 0x6d65_7065;

/// Global gradient-norm clip for meta-classifier batches. Raw model weights
/// arrive unnormalized, so early batches can be steep.
const GRAD_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMode {
    Binary,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Width of each per-layer representation `L_i`.
    pub latent_width: usize,
    pub phi_hidden: usize,
    pub rho_hidden: usize,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mode: MetaMode,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            latent_width: 16,
            phi_hidden: 16,
            rho_hidden: 16,
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            mode: MetaMode::Binary,
        }
    }
}

/// Two linear layers with a ReLU between; doubles as its own gradient
/// container.
#[derive(Debug, Clone, PartialEq)]
struct TwoLayer {
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl TwoLayer {
    fn init(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
                .collect::<Vec<f64>>()
        };
        Self {
            in_dim,
            hidden,
            out_dim,
            w1: uniform(hidden * in_dim, in_dim),
            b1: vec![0.0; hidden],
            w2: uniform(out_dim * hidden, hidden),
            b2: vec![0.0; out_dim],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            hidden: self.hidden,
            out_dim: self.out_dim,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Returns (hidden post-ReLU, output).
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut h1 = self.b1.clone();
        for (h, hv) in h1.iter_mut().enumerate() {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            *hv += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *hv = hv.max(0.0);
        }
        let mut out = self.b2.clone();
        for (o, ov) in out.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            *ov += row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>();
        }
        (h1, out)
    }

    /// Accumulates gradients for one call; optionally produces the gradient
    /// with respect to the input.
    fn backward(
        &self,
        x: &[f64],
        h1: &[f64],
        dout: &[f64],
        grads: &mut TwoLayer,
        mut dx: Option<&mut [f64]>,
    ) {
        let mut dh1 = vec![0.0; self.hidden];
        for (o, &go) in dout.iter().enumerate() {
            grads.b2[o] += go;
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            let grow = &mut grads.w2[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                grow[h] += go * h1[h];
                dh1[h] += row[h] * go;
            }
        }
        for (h, dh) in dh1.iter_mut().enumerate() {
            if h1[h] <= 0.0 {
                *dh = 0.0;
                continue;
            }
            grads.b1[h] += *dh;
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let grow = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += *dh * x[i];
                if let Some(dx) = dx.as_deref_mut() {
                    dx[i] += row[i] * *dh;
                }
            }
        }
    }

    fn sgd_step(&mut self, velocity: &mut Self, grads: &Self, lr: f64, momentum: f64) -> bool {
        let mut finite = true;
        let mut update = |p: &mut Vec<f64>, v: &mut Vec<f64>, g: &Vec<f64>| {
            for k in 0..p.len() {
                v[k] = momentum * v[k] + g[k];
                p[k] -= lr * v[k];
                finite &= p[k].is_finite();
            }
        };
        update(&mut self.w1, &mut velocity.w1, &grads.w1);
        update(&mut self.b1, &mut velocity.b1, &grads.b1);
        update(&mut self.w2, &mut velocity.w2, &grads.w2);
        update(&mut self.b2, &mut velocity.b2, &grads.b2);
        finite
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSig {
    rows: usize,
    raw_width: usize,
}

fn signature_of(arch: &[LayerSpec]) -> Result<Vec<LayerSig>, AttackError> {
    let sig: Vec<LayerSig> = arch
        .iter()
        .filter_map(|l| match *l {
            LayerSpec::Dense { input, output } => Some(LayerSig {
                rows: output,
                raw_width: input + 1,
            }),
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => Some(LayerSig {
                rows: c_out,
                raw_width: k1 * k2 * c_in + 1,
            }),
            _ => None,
        })
        .collect();
    if sig.is_empty() {
        return Err(AttackError::ArchMismatch(
            "architecture has no parameterized layers".into(),
        ));
    }
    Ok(sig)
}

/// Augmented row matrices of every parameterized layer: dense rows are
/// `weights .. bias`, convolutional rows come from [`conv_flatten`].
fn build_rows(net: &NetParams) -> Result<Vec<Vec<Vec<f64>>>, AttackError> {
    let mut all = Vec::new();
    let mut param_idx = 0;
    for spec in &net.arch {
        match *spec {
            LayerSpec::Dense { input, .. } => {
                let params = &net.layers[param_idx];
                param_idx += 1;
                let rows = params
                    .bias
                    .iter()
                    .enumerate()
                    .map(|(o, &b)| {
                        let mut row = params.weights[o * input..(o + 1) * input].to_vec();
                        row.push(b);
                        row
                    })
                    .collect();
                all.push(rows);
            }
            LayerSpec::Conv2D { k1, k2, c_in, c_out } => {
                let params = &net.layers[param_idx];
                param_idx += 1;
                all.push(conv_flatten(
                    &params.weights,
                    (k1, k2, c_in, c_out),
                    &params.bias,
                )?);
            }
            _ => {}
        }
    }
    Ok(all)
}

/// A trained (or freshly initialized) permutation-invariant meta-classifier
/// bound to one target architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaNet {
    pub mode: MetaMode,
    arch: Vec<LayerSpec>,
    signature: Vec<LayerSig>,
    latent_width: usize,
    phis: Vec<TwoLayer>,
    rho: TwoLayer,
}

struct FeatureCache {
    /// Per layer, per row: the phi input and the phi hidden activation.
    rows: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    features: Vec<f64>,
}

impl MetaNet {
    /// A meta-classifier with freshly initialized parameters for the given
    /// target architecture.
    pub fn init(arch: &[LayerSpec], cfg: &MetaConfig, seed: u64) -> Result<Self, AttackError> {
        let signature = signature_of(arch)?;
        let h = cfg.latent_width;
        let phis = signature
            .iter()
            .enumerate()
            .map(|(i, sig)| {
                let in_dim = sig.raw_width + if i > 0 { h } else { 0 };
                TwoLayer::init(in_dim, cfg.phi_hidden, h, mix64(&[seed, TAG_PHI_INIT, i as u64]))
            })
            .collect::<Vec<_>>();
        let mut rho = TwoLayer::init(
            h * signature.len(),
            cfg.rho_hidden,
            1,
            mix64(&[seed, TAG_RHO_INIT]),
        );
        // Zeroed head: the untrained meta-classifier predicts exactly 0.5
        // (binary) or 0 (regression), keeping the first batches bounded.
        rho.w2.fill(0.0);
        Ok(Self {
            mode: cfg.mode,
            arch: arch.to_vec(),
            signature,
            latent_width: h,
            phis,
            rho,
        })
    }

    pub fn accepts(&self, arch: &[LayerSpec]) -> bool {
        self.arch == arch
    }

    /// Feature width: one latent block per parameterized layer.
    pub fn feature_len(&self) -> usize {
        self.latent_width * self.signature.len()
    }

    fn check_arch(&self, net: &NetParams) -> Result<(), AttackError> {
        if self.accepts(&net.arch) {
            Ok(())
        } else {
            Err(AttackError::ArchMismatch(format!(
                "meta-classifier was built for a different architecture ({:?})",
                self.arch
            )))
        }
    }

    fn featurize_cached(
        &self,
        raw_rows: &[Vec<Vec<f64>>],
        orders: Option<&[Vec<usize>]>,
    ) -> FeatureCache {
        let h = self.latent_width;
        let mut caches = Vec::with_capacity(raw_rows.len());
        let mut features = Vec::with_capacity(self.feature_len());
        let mut prev: Vec<f64> = Vec::new();
        for (i, layer_rows) in raw_rows.iter().enumerate() {
            let phi = &self.phis[i];
            let mut sums = vec![KahanSum::new(); h];
            let mut row_cache = Vec::with_capacity(layer_rows.len());
            let natural: Vec<usize>;
            let order: &[usize] = match orders {
                Some(o) => &o[i],
                None => {
                    natural = (0..layer_rows.len()).collect();
                    &natural
                }
            };
            for &r in order {
                let mut x = layer_rows[r].clone();
                x.extend_from_slice(&prev);
                let (h1, out) = phi.forward(&x);
                for (s, v) in sums.iter_mut().zip(&out) {
                    s.add(*v);
                }
                row_cache.push((x, h1));
            }
            prev = sums.iter().map(KahanSum::total).collect();
            features.extend_from_slice(&prev);
            caches.push(row_cache);
        }
        FeatureCache {
            rows: caches,
            features,
        }
    }

    /// Concatenated per-layer set representations of a target model.
    pub fn featurize(&self, net: &NetParams) -> Result<Vec<f64>, AttackError> {
        self.check_arch(net)?;
        let rows = build_rows(net)?;
        Ok(self.featurize_cached(&rows, None).features)
    }

    /// [`MetaNet::featurize`] with an explicit presentation order for each
    /// layer's rows. The output must not depend on the order; invariance
    /// checks exercise exactly this entry point.
    pub fn featurize_with_row_order(
        &self,
        net: &NetParams,
        orders: &[Vec<usize>],
    ) -> Result<Vec<f64>, AttackError> {
        self.check_arch(net)?;
        let rows = build_rows(net)?;
        assert_eq!(orders.len(), rows.len());
        Ok(self.featurize_cached(&rows, Some(orders)).features)
    }

    /// Raw head output: a logit in binary mode, a ratio estimate in
    /// regression mode.
    fn head(&self, features: &[f64]) -> f64 {
        self.rho.forward(features).1[0]
    }

    pub fn predict(&self, net: &NetParams) -> Result<f64, AttackError> {
        let features = self.featurize(net)?;
        let out = self.head(&features);
        Ok(match self.mode {
            MetaMode::Binary => sigmoid(out),
            MetaMode::Regression => out,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Free-function alias for [`MetaNet::featurize`].
pub fn featurize_model(meta: &MetaNet, net: &NetParams) -> Result<Vec<f64>, AttackError> {
    meta.featurize(net)
}

/// Trains a meta-classifier end to end (phi maps and head jointly) by seeded
/// minibatch SGD with momentum: cross-entropy in binary mode against the
/// distribution labels, mean squared error in regression mode against the
/// per-model training ratios.
pub fn meta_train(
    pool: &ShadowPool,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<MetaNet, AttackError> {
    assert!(!pool.models.is_empty());
    let targets: Vec<f64> = match cfg.mode {
        MetaMode::Binary => {
            if !pool.has_both_labels() {
                return Err(AttackError::MissingLabel);
            }
            pool.dist_labels.iter().map(|&l| f64::from(l)).collect()
        }
        MetaMode::Regression => match &pool.alpha_labels {
            Some(alphas) if alphas.len() == pool.models.len() => alphas.clone(),
            _ => return Err(AttackError::MissingLabel),
        },
    };
    let mut meta = MetaNet::init(&pool.models[0].arch, cfg, seed)?;
    for net in &pool.models {
        meta.check_arch(net)?;
    }
    let model_rows: Vec<Vec<Vec<Vec<f64>>>> = pool
        .models
        .iter()
        .map(|m| build_rows(m))
        .collect::<Result<_, _>>()?;

    let h = meta.latent_width;
    let n_layers = meta.signature.len();
    let mut phi_velocity: Vec<TwoLayer> = meta.phis.iter().map(TwoLayer::zeros_like).collect();
    let mut rho_velocity = meta.rho.zeros_like();
    let mut order: Vec<usize> = (0..pool.models.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[seed, TAG_META_EPOCH, epoch as u64]));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut phi_grads: Vec<TwoLayer> =
                meta.phis.iter().map(TwoLayer::zeros_like).collect();
            let mut rho_grads = meta.rho.zeros_like();
            let scale = 1.0 / batch.len() as f64;

            for &idx in batch {
                let cache = meta.featurize_cached(&model_rows[idx], None);
                let (rho_h1, out) = meta.rho.forward(&cache.features);
                let dout = match cfg.mode {
                    MetaMode::Binary => sigmoid(out[0]) - targets[idx],
                    MetaMode::Regression => 2.0 * (out[0] - targets[idx]),
                } * scale;

                let mut dfeatures = vec![0.0; cache.features.len()];
                meta.rho.backward(
                    &cache.features,
                    &rho_h1,
                    &[dout],
                    &mut rho_grads,
                    Some(&mut dfeatures),
                );

                // Walk layers top-down; context gradients flow into the
                // previous layer's representation through the appended slice.
                let mut carried = vec![0.0; h];
                for i in (0..n_layers).rev() {
                    let mut d_layer = dfeatures[i * h..(i + 1) * h].to_vec();
                    if i + 1 < n_layers {
                        for (d, c) in d_layer.iter_mut().zip(&carried) {
                            *d += *c;
                        }
                    }
                    let mut next_carried = vec![0.0; h];
                    let raw_width = meta.signature[i].raw_width;
                    for (x, h1) in &cache.rows[i] {
                        let mut dx = vec![0.0; x.len()];
                        meta.phis[i].backward(
                            x,
                            h1,
                            &d_layer,
                            &mut phi_grads[i],
                            Some(&mut dx),
                        );
                        if i > 0 {
                            for (c, d) in next_carried.iter_mut().zip(&dx[raw_width..]) {
                                *c += *d;
                            }
                        }
                    }
                    carried = next_carried;
                }
            }

            let mut finite = true;
            for ((phi, vel), grads) in meta
                .phis
                .iter_mut()
                .zip(&mut phi_velocity)
                .zip(&phi_grads)
            {
                finite &= phi.sgd_step(vel, grads, cfg.learning_rate, cfg.momentum);
            }
            finite &= meta
                .rho
                .sgd_step(&mut rho_velocity, &rho_grads, cfg.learning_rate, cfg.momentum);
            if !finite {
                return Err(AttackError::NumericalDivergence { epoch });
            }
        }
    }
    Ok(meta)
}

/// Prediction for a target model: the probability of distribution 1 in
/// binary mode (threshold at 0.5 for a hard decision), the predicted ratio in
/// regression mode (unclamped; clamp only when reporting).
pub fn meta_predict(meta: &MetaNet, target: &NetParams) -> Result<f64, AttackError> {
    meta.predict(target)
}
