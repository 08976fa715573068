//! Embedding head trained with an L2-constrained softmax classifier.
//!
//! ```text
//! x -> [Dense + ReLU]* -> Dense -> f -> e = alpha * f / |f| -> logits = W^T e -> softmax
//! ```
//!
//! The classifier has no bias. Training minimizes mean categorical
//! cross-entropy with Adam and keeps the parameter snapshot of the epoch
//! with the lowest validation loss. Downstream scoring uses `e`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsv;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MHD1";

/// Below this pre-normalization norm the embedding direction is undefined.
pub const MIN_EMBED_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    /// Fixed norm of the constrained embedding.
    pub alpha: f64,
    pub num_classes: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_dims: vec![256],
            embed_dim: 128,
            alpha: 16.0,
            num_classes: 2,
            lr: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("all layer dimensions must be at least 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive and finite");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Dense f64 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `[out, in]`
    weight: Tensor,
    /// `[out]`
    bias: Tensor,
}

impl Dense {
    fn he_init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        let mut weight = Tensor::zeros(&[outputs, inputs]);
        weight.data.iter_mut().for_each(|w| *w = normal.sample(rng));
        Self {
            weight,
            bias: Tensor::zeros(&[outputs]),
        }
    }

    fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.inputs();
        self.weight
            .data
            .chunks_exact(n_in)
            .zip(&self.bias.data)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut Tensor, gb: &mut Tensor) -> Vec<f64> {
        let n_in = self.inputs();
        let mut dx = vec![0.0; n_in];
        for (o, &g) in dy.iter().enumerate() {
            gb.data[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight.data[o * n_in..(o + 1) * n_in];
            let grow = &mut gw.data[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += g * x[i];
                dx[i] += row[i] * g;
            }
        }
        dx
    }
}

/// Rescales `f` to norm `alpha`.
pub fn l2_constrain(f: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let norm = norm2(f);
    if norm.is_nan() || norm < MIN_EMBED_NORM {
        return Err(Error::DegenerateEmbedding(norm));
    }
    Ok(f.iter().map(|v| alpha * v / norm).collect())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-parameter gradients, in [`MetricHeadModel::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

/// Intermediate values of one forward pass.
struct ForwardTrace {
    /// Input to every dense layer (hidden layers then the embedding layer).
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    hidden_pre: Vec<Vec<f64>>,
    f: Vec<f64>,
    norm: f64,
    e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricHeadModel {
    config: HeadConfig,
    hidden: Vec<Dense>,
    embed: Dense,
    /// `[embed_dim, num_classes]`, no bias.
    classifier: Tensor,
    trained_epochs: usize,
    best_epoch: usize,
}

impl MetricHeadModel {
    /// He-initialized ReLU layers, Glorot-initialized classifier.
    pub fn init(config: &HeadConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut hidden = Vec::new();
        let mut prev = config.input_dim;
        for &h in &config.hidden_dims {
            hidden.push(Dense::he_init(prev, h, rng));
            prev = h;
        }
        let embed = Dense::he_init(prev, config.embed_dim, rng);
        let std = (2.0 / (config.embed_dim + config.num_classes) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut classifier = Tensor::zeros(&[config.embed_dim, config.num_classes]);
        classifier
            .data
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng));
        Ok(Self {
            config: config.clone(),
            hidden,
            embed,
            classifier,
            trained_epochs: 0,
            best_epoch: 0,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Parameters in a fixed order: per hidden layer weight and bias, then
    /// embedding weight and bias, then the classifier.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in &self.hidden {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out.push(&self.embed.weight);
        out.push(&self.embed.bias);
        out.push(&self.classifier);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in &mut self.hidden {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out.push(&mut self.embed.weight);
        out.push(&mut self.embed.bias);
        out.push(&mut self.classifier);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head input".into()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        let mut layer_inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut hidden_pre = Vec::with_capacity(self.hidden.len());
        let mut h = x.to_vec();
        for layer in &self.hidden {
            let pre = layer.forward(&h);
            let act = pre.iter().map(|&v| v.max(0.0)).collect();
            layer_inputs.push(std::mem::replace(&mut h, act));
            hidden_pre.push(pre);
        }
        let f = self.embed.forward(&h);
        layer_inputs.push(h);
        let norm = norm2(&f);
        if norm.is_nan() || norm < MIN_EMBED_NORM {
            return Err(Error::DegenerateEmbedding(norm));
        }
        let e = f.iter().map(|v| self.config.alpha * v / norm).collect();
        Ok(ForwardTrace {
            layer_inputs,
            hidden_pre,
            f,
            norm,
            e,
        })
    }

    /// Pre-normalization embedding `f`.
    pub fn raw_embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.hidden {
            h = layer.forward(&h).into_iter().map(|v| v.max(0.0)).collect();
        }
        Ok(self.embed.forward(&h))
    }

    /// L2-constrained embedding `alpha * f / |f|`.
    pub fn forward_embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        l2_constrain(&self.raw_embed(x)?, self.config.alpha)
    }

    fn logits(&self, e: &[f64]) -> Vec<f64> {
        let k = self.config.num_classes;
        let mut z = vec![0.0; k];
        for (j, &ej) in e.iter().enumerate() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.classifier.data[j * k + c] * ej;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let e = self.forward_embed(x)?;
        Ok(softmax(&self.logits(&e)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(argmax(&p))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {label} outside [0, {})",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    fn sample_loss(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_input(x)?;
        self.check_label(label)?;
        let t = self.trace(x)?;
        Ok(cross_entropy(&self.logits(&t.e), label))
    }

    /// Mean cross-entropy over a batch, without gradients.
    pub fn loss(&self, batch: &[(&[f64], usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let mut total = 0.0;
        for &(x, y) in batch {
            total += self.sample_loss(x, y)?;
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(loss)
    }

    /// Mean cross-entropy over the batch and its exact gradient with respect
    /// to every parameter.
    pub fn loss_and_grads(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let mut grads: Vec<Tensor> = self.tensors().iter().map(|t| t.zeros_like()).collect();
        let n_hidden = self.hidden.len();
        let k = self.config.num_classes;
        let alpha = self.config.alpha;
        let mut total = 0.0;

        for &(x, label) in batch {
            self.check_input(x)?;
            self.check_label(label)?;
            let t = self.trace(x)?;
            let z = self.logits(&t.e);
            total += cross_entropy(&z, label);

            // d loss / d logits
            let mut dz = softmax(&z);
            dz[label] -= 1.0;

            // classifier and d loss / d e
            let gc = &mut grads[2 * n_hidden + 2];
            let mut de = vec![0.0; t.e.len()];
            for (j, &ej) in t.e.iter().enumerate() {
                let row = j * k;
                for (c, &dzc) in dz.iter().enumerate() {
                    gc.data[row + c] += ej * dzc;
                    de[j] += self.classifier.data[row + c] * dzc;
                }
            }

            // through e = alpha f / |f|: (alpha/|f|)(I - f f^T / |f|^2)
            let f_dot_de: f64 = t.f.iter().zip(&de).map(|(a, b)| a * b).sum();
            let scale = alpha / t.norm;
            let nn = t.norm * t.norm;
            let df: Vec<f64> =
                t.f.iter()
                    .zip(&de)
                    .map(|(fi, gi)| scale * (gi - fi * f_dot_de / nn))
                    .collect();

            let (head, _) = grads.split_at_mut(2 * n_hidden + 2);
            let (gw, gb) = head[2 * n_hidden..].split_at_mut(1);
            let mut dh =
                self.embed
                    .backward(&t.layer_inputs[n_hidden], &df, &mut gw[0], &mut gb[0]);

            for l in (0..n_hidden).rev() {
                let dpre: Vec<f64> = dh
                    .iter()
                    .zip(&t.hidden_pre[l])
                    .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
                    .collect();
                let (gw, gb) = head[2 * l..2 * l + 2].split_at_mut(1);
                dh = self.hidden[l].backward(&t.layer_inputs[l], &dpre, &mut gw[0], &mut gb[0]);
            }
        }

        let inv = 1.0 / batch.len() as f64;
        for g in &mut grads {
            g.data.iter_mut().for_each(|v| *v *= inv);
        }
        let loss = total * inv;
        if !loss.is_finite() || grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((loss, Gradients { tensors: grads }))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&cfg).map_err(io)?;
        w.write_all(&(self.trained_epochs as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&(self.best_epoch as u32).to_le_bytes())
            .map_err(io)?;
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())
            .map_err(io)?;
        for t in tensors {
            w.write_all(&(t.shape.len() as u32).to_le_bytes())
                .map_err(io)?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("checkpoint", m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("missing MHD1 magic"));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)
            .map_err(|_| bad("truncated config block"))?;
        let config: HeadConfig = serde_json::from_slice(&cfg)?;
        config.validate()?;
        let trained_epochs = read_u32(&mut r)? as usize;
        let best_epoch = read_u32(&mut r)? as usize;
        let mut model = Self::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.trained_epochs = trained_epochs;
        model.best_epoch = best_epoch;
        let count = read_u32(&mut r)? as usize;
        let mut slots = model.tensors_mut();
        if count != slots.len() {
            return Err(bad("tensor count does not match the config"));
        }
        for slot in slots.iter_mut() {
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| bad("truncated tensor shape"))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != slot.shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", slot.shape),
                    found: format!("{shape:?}"),
                });
            }
            for v in slot.data.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| bad("truncated tensor data"))?;
                *v = f64::from_le_bytes(b);
                if !v.is_finite() {
                    return Err(Error::NonFinite("checkpoint tensor".into()));
                }
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|_| bad("read failure"))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        tsv::write_bytes(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint", "truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(z)[label]`, computed stably.
pub fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[label]
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        HeadConfig::default().adam()
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update at 1-based step `t`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamMoments,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", params.len()),
            found: format!(
                "grads {}, m {}, v {}",
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        });
    }
    if t == 0 {
        return Err(Error::InvalidConfig("Adam step index starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam state over every tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(model: &MetricHeadModel) -> Self {
        Self {
            cfg: model.config.adam(),
            step: 0,
            moments: model
                .tensors()
                .iter()
                .map(|t| AdamMoments::zeros(t.data.len()))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut MetricHeadModel, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let mut params = model.tensors_mut();
        if params.len() != grads.tensors.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} tensors", params.len()),
                found: format!("{} tensors", grads.tensors.len()),
            });
        }
        for ((p, g), m) in params.iter_mut().zip(&grads.tensors).zip(&mut self.moments) {
            adam_step(&mut p.data, &g.data, m, self.step, &self.cfg)?;
        }
        Ok(())
    }
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn push(&mut self, x: &[f64], label: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        self.inputs.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, idx: &[usize]) -> Vec<(&[f64], usize)> {
        idx.iter()
            .map(|&i| (self.input(i), self.labels[i]))
            .collect()
    }

    fn all(&self) -> Vec<(&[f64], usize)> {
        (0..self.len())
            .map(|i| (self.input(i), self.labels[i]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochLoss>,
    pub best_epoch: usize,
}

impl TrainingTrace {
    /// `epoch<TAB>train_loss<TAB>val_loss` lines.
    pub fn to_tsv(&self) -> String {
        self.epochs
            .iter()
            .map(|e| format!("{}\t{:.10}\t{:.10}\n", e.epoch, e.train_loss, e.val_loss))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for (line, l) in tsv::data_lines(text) {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::Parse {
                    line,
                    message: "expected `epoch<TAB>train_loss<TAB>val_loss`".into(),
                });
            }
            let epoch = f[0].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad epoch {:?}", f[0]),
            })?;
            epochs.push(EpochLoss {
                epoch,
                train_loss: tsv::parse_f64(f[1], line, "train_loss")?,
                val_loss: tsv::parse_f64(f[2], line, "val_loss")?,
            });
        }
        let best_epoch = best_epoch(&epochs);
        Ok(Self { epochs, best_epoch })
    }
}

/// Argmin of validation loss, earliest on ties; 0 for an empty trace.
fn best_epoch(epochs: &[EpochLoss]) -> usize {
    let mut best: Option<&EpochLoss> = None;
    for e in epochs {
        if best.is_none_or(|b| e.val_loss < b.val_loss) {
            best = Some(e);
        }
    }
    best.map_or(0, |b| b.epoch)
}

/// Seeded mini-batch training with per-epoch validation and best-epoch
/// selection.
pub fn train(
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &HeadConfig,
) -> Result<(MetricHeadModel, TrainingTrace)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig(
            "training and validation sets must be nonempty".into(),
        ));
    }
    for set in [train_set, val_set] {
        if set.dim() != cfg.input_dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_dim,
                found: set.dim(),
            });
        }
        if let Some(&bad) = set.labels().iter().find(|&&l| l >= cfg.num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside [0, {})",
                cfg.num_classes
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MetricHeadModel::init(cfg, &mut rng)?;
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, MetricHeadModel)> = None;
    let train_all = train_set.all();
    let val_all = val_set.all();

    let diverged = |epoch: usize| {
        move |e: Error| match e {
            Error::NonFinite(_) => Error::Divergence { epoch },
            other => other,
        }
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (_, grads) = model
                .loss_and_grads(&train_set.batch(chunk))
                .map_err(diverged(epoch))?;
            adam.step(&mut model, &grads)?;
        }
        let train_loss = model.loss(&train_all).map_err(diverged(epoch))?;
        let val_loss = model.loss(&val_all).map_err(diverged(epoch))?;
        epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(v, _)| val_loss < *v) {
            let mut snapshot = model.clone();
            snapshot.best_epoch = epoch;
            best = Some((val_loss, snapshot));
        }
    }

    let (_, mut chosen) = best.expect("at least one epoch");
    chosen.trained_epochs = cfg.epochs;
    let trace = TrainingTrace {
        best_epoch: chosen.best_epoch,
        epochs,
    };
    debug_assert_eq!(trace.best_epoch, best_epoch(&trace.epochs));
    Ok((chosen, trace))
}
