//! Single-hidden-layer ReLU classifier with two logits, cross-entropy loss,
//! exact backprop, per-sample gradients and Adam.
//!
//! Parameters live in one flat `Vec<f64>` laid out as `W1, b1, W2, b2`:
//!
//! * `W1` is input-major: weight from input `j` to hidden unit `h` sits at
//!   `j * width + h`. Parity inputs are sparse 0/1 vectors, so the forward
//!   pass only touches the rows of active inputs.
//! * `W2` is class-major: weight from hidden `h` to logit `c` at `c * width + h`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parity::SampleBatch;
use crate::seed::stream_rng;

pub const OUTPUT_DIM: usize = 2;

const CHECKPOINT_MAGIC: &[u8; 8] = b"QMLPCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn param_count(input_dim: usize, width: usize) -> usize {
    input_dim * width + width + OUTPUT_DIM * width + OUTPUT_DIM
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub input_dim: usize,
    pub width: usize,
}

impl ParamLayout {
    pub fn new(input_dim: usize, width: usize) -> Self {
        Self { input_dim, width }
    }

    pub fn len(&self) -> usize {
        param_count(self.input_dim, self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.input_dim * self.width
    }

    pub fn b1(&self) -> Range<usize> {
        let start = self.w1().end;
        start..start + self.width
    }

    pub fn w2(&self) -> Range<usize> {
        let start = self.b1().end;
        start..start + OUTPUT_DIM * self.width
    }

    pub fn b2(&self) -> Range<usize> {
        let start = self.w2().end;
        start..start + OUTPUT_DIM
    }

    pub fn segments(&self) -> [(&'static str, Range<usize>); 4] {
        [("W1", self.w1()), ("b1", self.b1()), ("W2", self.w2()), ("b2", self.b2())]
    }
}

/// A flattened parameter gradient together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self { layout, values: vec![0.0; layout.len()] }
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segments()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| &self.values[r])
    }

    /// Split into `(W1, b1, W2, b2)` copies.
    pub fn split(&self) -> [Vec<f64>; 4] {
        self.layout.segments().map(|(_, r)| self.values[r].to_vec())
    }

    /// Inverse of [`GradVector::split`].
    pub fn from_segments(layout: ParamLayout, parts: &[Vec<f64>; 4]) -> Result<Self> {
        let mut values = Vec::with_capacity(layout.len());
        for ((_, range), part) in layout.segments().iter().zip(parts) {
            if part.len() != range.len() {
                return Err(Error::Shape { expected: range.len(), got: part.len() });
            }
            values.extend_from_slice(part);
        }
        Ok(Self { layout, values })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layout: ParamLayout,
    params: Vec<f64>,
}

/// Scratch buffers reused across samples.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    active: Vec<usize>,
    pre: Vec<f64>,
    dpre: Vec<f64>,
}

impl Workspace {
    fn ensure(&mut self, width: usize) {
        self.pre.resize(width, 0.0);
        self.dpre.resize(width, 0.0);
    }
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
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

impl MlpModel {
    pub fn from_params(layout: ParamLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(Error::Shape { expected: layout.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[self.layout.w1()]
    }

    pub fn b1(&self) -> &[f64] {
        &self.params[self.layout.b1()]
    }

    pub fn w2(&self) -> &[f64] {
        &self.params[self.layout.w2()]
    }

    pub fn b2(&self) -> &[f64] {
        &self.params[self.layout.b2()]
    }

    /// Zero `W2` and `b2` so that the untrained network predicts uniformly.
    pub fn zero_output_layer(&mut self) {
        let w2 = self.layout.w2();
        let b2 = self.layout.b2();
        self.params[w2].fill(0.0);
        self.params[b2].fill(0.0);
    }

    fn check_batch(&self, batch: &SampleBatch) -> Result<()> {
        if batch.input_dim() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: batch.input_dim() });
        }
        Ok(())
    }

    /// Hidden pre-activations into `ws.pre`; returns the two logits.
    fn forward_row(&self, batch: &SampleBatch, row: usize, ws: &mut Workspace) -> [f64; 2] {
        let width = self.width();
        ws.ensure(width);
        batch.active_inputs(row, &mut ws.active);
        let w1 = self.w1();
        ws.pre.copy_from_slice(self.b1());
        for &j in &ws.active {
            let col = &w1[j * width..(j + 1) * width];
            for (p, w) in ws.pre.iter_mut().zip(col) {
                *p += w;
            }
        }
        let w2 = self.w2();
        let b2 = self.b2();
        let mut logits = [b2[0], b2[1]];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &w2[c * width..(c + 1) * width];
            *logit += row.iter().zip(&ws.pre).map(|(w, &p)| w * p.max(0.0)).sum::<f64>();
        }
        logits
    }

    /// Cross-entropy of one row, given its logits.
    fn row_loss(logits: [f64; 2], label: u8) -> f64 {
        let y = label as usize;
        softplus(logits[1 - y] - logits[y])
    }

    pub fn logits(&self, batch: &SampleBatch, row: usize) -> Result<[f64; 2]> {
        self.check_batch(batch)?;
        if row >= batch.len() {
            return Err(Error::Bounds { index: row, len: batch.len() });
        }
        Ok(self.forward_row(batch, row, &mut Workspace::default()))
    }

    /// Per-sample cross-entropy losses in nats.
    pub fn per_sample_losses(&self, batch: &SampleBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let mut ws = Workspace::default();
        Ok((0..batch.len())
            .map(|r| Self::row_loss(self.forward_row(batch, r, &mut ws), batch.labels()[r]))
            .collect())
    }

    /// Accumulate `scale * grad(loss_row)` into `grad`; returns the row loss.
    fn accumulate_row(&self, batch: &SampleBatch, row: usize, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        let width = self.width();
        let logits = self.forward_row(batch, row, ws);
        let y = batch.labels()[row] as usize;
        let other = 1 - y;
        let z = logits[other] - logits[y];
        let loss = softplus(z);
        // d loss / d logit_other = q, d loss / d logit_y = -q.
        let q = sigmoid(z) * scale;

        let layout = self.layout;
        let w2 = self.w2();
        {
            let gb2 = &mut grad[layout.b2()];
            gb2[other] += q;
            gb2[y] -= q;
        }
        {
            let gw2 = &mut grad[layout.w2()];
            let (g0, g1) = gw2.split_at_mut(width);
            let (g_other, g_y) = if other == 0 { (g0, g1) } else { (g1, g0) };
            for h in 0..width {
                let act = ws.pre[h].max(0.0);
                g_other[h] += q * act;
                g_y[h] -= q * act;
            }
        }
        let w_other = &w2[other * width..(other + 1) * width];
        let w_y = &w2[y * width..(y + 1) * width];
        for h in 0..width {
            ws.dpre[h] = if ws.pre[h] > 0.0 { q * (w_other[h] - w_y[h]) } else { 0.0 };
        }
        for (g, d) in grad[layout.b1()].iter_mut().zip(&ws.dpre) {
            *g += d;
        }
        let gw1 = &mut grad[layout.w1()];
        for &j in &ws.active {
            for (g, d) in gw1[j * width..(j + 1) * width].iter_mut().zip(&ws.dpre) {
                *g += d;
            }
        }
        loss
    }

    /// Mean loss and its exact gradient over the batch, written into `grad`.
    pub fn loss_and_grad(&self, batch: &SampleBatch, grad: &mut [f64], ws: &mut Workspace) -> Result<f64> {
        self.check_batch(batch)?;
        if grad.len() != self.param_count() {
            return Err(Error::Shape { expected: self.param_count(), got: grad.len() });
        }
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        grad.fill(0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for row in 0..batch.len() {
            total += self.accumulate_row(batch, row, scale, grad, ws);
        }
        Ok(total * scale)
    }

    /// Gradient of a single sample's loss; returns `(loss, gradient)`.
    pub fn sample_grad(&self, batch: &SampleBatch, row: usize, ws: &mut Workspace) -> Result<(f64, GradVector)> {
        self.check_batch(batch)?;
        if row >= batch.len() {
            return Err(Error::Bounds { index: row, len: batch.len() });
        }
        let mut grad = GradVector::zeros(self.layout);
        let loss = self.accumulate_row(batch, row, 1.0, &mut grad.values, ws);
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
        write(CHECKPOINT_MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&(self.input_dim() as u64).to_le_bytes())?;
        write(&(self.width() as u64).to_le_bytes())?;
        write(&(self.param_count() as u64).to_le_bytes())?;
        for p in &self.params {
            write(&p.to_le_bytes())?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut read = |buf: &mut [u8]| input.read_exact(buf).map_err(|e| Error::io(path, e));
        let mut magic = [0u8; 8];
        read(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a model checkpoint"));
        }
        let mut word4 = [0u8; 4];
        read(&mut word4)?;
        let version = u32::from_le_bytes(word4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let mut word8 = [0u8; 8];
        let mut next_u64 = |read: &mut dyn FnMut(&mut [u8]) -> Result<()>| -> Result<u64> {
            read(&mut word8)?;
            Ok(u64::from_le_bytes(word8))
        };
        let input_dim = next_u64(&mut read)? as usize;
        let width = next_u64(&mut read)? as usize;
        let count = next_u64(&mut read)? as usize;
        let layout = ParamLayout::new(input_dim, width);
        if count != layout.len() {
            return Err(Error::format(path, format!("parameter count {count} does not match layout {}", layout.len())));
        }
        let mut params = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            read(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Self::from_params(layout, params).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Uniform fan-in scaled weights (`±sqrt(6 / fan_in)`), zero biases.
pub fn init_model(input_dim: usize, width: usize, seed: u64) -> Result<MlpModel> {
    if width == 0 || input_dim == 0 {
        return Err(Error::Domain("input_dim and width must be >= 1".into()));
    }
    let layout = ParamLayout::new(input_dim, width);
    let mut params = vec![0.0; layout.len()];
    let mut rng = stream_rng(seed, 0);
    let limit1 = (6.0 / input_dim as f64).sqrt();
    for w in &mut params[layout.w1()] {
        *w = rng.random_range(-limit1..limit1);
    }
    let limit2 = (6.0 / width as f64).sqrt();
    for w in &mut params[layout.w2()] {
        *w = rng.random_range(-limit2..limit2);
    }
    MlpModel::from_params(layout, params)
}

/// Mean cross-entropy (nats) and per-sample losses.
pub fn forward_loss(model: &MlpModel, batch: &SampleBatch) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let losses = model.per_sample_losses(batch)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((mean, losses))
}

/// Exact gradient of the mean cross-entropy.
pub fn backward(model: &MlpModel, batch: &SampleBatch) -> Result<GradVector> {
    let mut grad = GradVector::zeros(model.layout());
    model.loss_and_grad(batch, &mut grad.values, &mut Workspace::default())?;
    Ok(grad)
}

/// Gradient of the loss of sample `row` alone, over every parameter.
pub fn per_sample_grad(model: &MlpModel, batch: &SampleBatch, row: usize) -> Result<GradVector> {
    Ok(model.sample_grad(batch, row, &mut Workspace::default())?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { config, first_moment: vec![0.0; len], second_moment: vec![0.0; len], t: 0 }
    }

    /// One bias-corrected Adam update of `params`. A non-finite gradient
    /// leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape { expected: self.first_moment.len(), got: params.len() });
        }
        if grad.len() != params.len() {
            return Err(Error::Shape { expected: params.len(), got: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(model: &mut MlpModel, state: &mut AdamState, grad: &GradVector) -> Result<()> {
    if grad.layout != model.layout() {
        return Err(Error::Shape { expected: model.param_count(), got: grad.values.len() });
    }
    state.step(model.params_mut(), &grad.values)
}
