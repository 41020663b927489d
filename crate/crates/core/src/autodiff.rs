//! Named parameters with gradients and Adam state, the differentiable
//! position-wise primitives used by the model, and checkpoint I/O.
//!
//! Each primitive is a pair of functions: a forward pass that returns
//! whatever the backward pass needs, and a backward pass that maps the
//! output gradient to the input gradient and accumulates parameter
//! gradients into the tape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Structured SSM parameters (poles, step sizes, couplings).
    Ssm,
    /// Encoder, mixing, normalization and decoder weights.
    Dense,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub group: ParamGroup,
    /// Held out of the gradient step; its gradient is forced to zero.
    pub detached: bool,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr_dense: f64,
    pub lr_ssm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_dense: 1e-3,
            lr_ssm: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamTape {
    params: Vec<Param>,
    step: u64,
}

impl ParamTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>, group: ParamGroup) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        if value.len() != len {
            return Err(Error::Size(format!(
                "parameter {name}: shape {shape:?} but {} values",
                value.len()
            )));
        }
        if self.id(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
            value,
            group,
            detached: false,
        });
        Ok(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id].grad
    }

    /// Row-major matrix view of a rank-2 parameter.
    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.value).expect("rank-2 parameter")
    }

    pub fn set_detached(&mut self, id: ParamId, detached: bool) {
        self.params[id].detached = detached;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Zeroes the gradients of detached parameters.
    pub fn apply_detach(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.detached) {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().chain(&p.grad).all(|v| v.is_finite()))
    }

    /// One bias-corrected Adam update of every non-detached parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| !p.detached) {
            let lr = match p.group {
                ParamGroup::Ssm => cfg.lr_ssm,
                ParamGroup::Dense => cfg.lr_dense,
            };
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                p.value[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }

    /// Writes all parameter values in order as an `S4CK` checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blocks: Vec<CheckpointBlock> = self
            .params
            .iter()
            .map(|p| CheckpointBlock {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.clone(),
            })
            .collect();
        write_checkpoint(path, &blocks)
    }

    /// Loads parameter values from a checkpoint whose blocks match this
    /// tape's names and shapes exactly.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let blocks = read_checkpoint(path)?;
        if blocks.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameter blocks, model expects {}",
                blocks.len(),
                self.params.len()
            )));
        }
        for (p, b) in self.params.iter_mut().zip(blocks) {
            if p.name != b.name || p.shape != b.shape {
                return Err(Error::Config(format!(
                    "checkpoint block {} {:?} does not match parameter {} {:?}",
                    b.name, b.shape, p.name, p.shape
                )));
            }
            p.value = b.data;
        }
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"S4CK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, blocks: &[CheckpointBlock]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for b in blocks {
        buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for d in &b.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &b.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointBlock>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let fmt = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut r = ByteReader::new(&bytes);
    if r.take(4).ok_or_else(|| fmt("truncated magic"))? != CHECKPOINT_MAGIC {
        return Err(fmt("bad magic, expected S4CK"));
    }
    let version = r.u32().ok_or_else(|| fmt("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(fmt(&format!("unsupported checkpoint version {version}")));
    }
    let mut blocks = Vec::new();
    while !r.done() {
        let len = r.u32().ok_or_else(|| fmt("truncated block name length"))? as usize;
        let name = r.take(len).ok_or_else(|| fmt("truncated block name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| fmt("block name is not utf-8"))?;
        let rank = r.u32().ok_or_else(|| fmt("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| fmt("truncated dims"))? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f64().ok_or_else(|| fmt("truncated payload"))?);
        }
        blocks.push(CheckpointBlock { name, shape, data });
    }
    Ok(blocks)
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// `y = x Wᵀ + b` row-wise, with `W` of shape out × in.
pub fn linear_forward(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: &[f64]) -> Result<Array2<f64>> {
    if x.ncols() != w.ncols() || b.len() != w.nrows() {
        return Err(Error::Size(format!(
            "linear {}x{} applied to {} features with {} biases",
            w.nrows(),
            w.ncols(),
            x.ncols(),
            b.len()
        )));
    }
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(y)
}

/// Returns the input gradient and accumulates `∂W`, `∂b` into the tape.
pub fn linear_backward(
    tape: &mut ParamTape,
    x: &Array2<f64>,
    w: ParamId,
    b: ParamId,
    gy: &Array2<f64>,
) -> Array2<f64> {
    let gx = gy.dot(&tape.matrix(w));
    let gw = gy.t().dot(x);
    for (g, d) in tape.grad_mut(w).iter_mut().zip(gw.iter()) {
        *g += d;
    }
    let gb = gy.sum_axis(Axis(0));
    for (g, d) in tape.grad_mut(b).iter_mut().zip(gb.iter()) {
        *g += d;
    }
    gx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

pub fn gelu_backward(x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = x.mapv(gelu_grad);
    g *= gy;
    g
}

pub fn relu_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = gy.clone();
    g.zip_mut_with(x, |g, x| {
        if *x <= 0.0 {
            *g = 0.0
        }
    });
    g
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Saved normalized activations and inverse standard deviations.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization to zero mean and unit variance, then `γ·x̂ + β`.
pub fn layer_norm_forward(x: &Array2<f64>, gamma: &[f64], beta: &[f64]) -> Result<(Array2<f64>, LayerNormCache)> {
    let h = x.ncols();
    if gamma.len() != h || beta.len() != h {
        return Err(Error::Size(format!("layer norm over {h} features with {} gains", gamma.len())));
    }
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * s);
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

pub fn layer_norm_backward(
    tape: &mut ParamTape,
    cache: &LayerNormCache,
    gamma: ParamId,
    beta: ParamId,
    gy: &Array2<f64>,
) -> Array2<f64> {
    let h = gy.ncols();
    let g = tape.value(gamma).to_vec();
    let mut dgamma = vec![0.0; h];
    let mut dbeta = vec![0.0; h];
    let mut gx = Array2::zeros(gy.raw_dim());
    for (r, (gy_row, xh_row)) in gy.rows().into_iter().zip(cache.xhat.rows()).enumerate() {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..h {
            dgamma[j] += gy_row[j] * xh_row[j];
            dbeta[j] += gy_row[j];
            let d = gy_row[j] * g[j];
            sum_d += d;
            sum_dx += d * xh_row[j];
        }
        let s = cache.inv_std[r];
        let mut out = gx.row_mut(r);
        for j in 0..h {
            let d = gy_row[j] * g[j];
            out[j] = s / h as f64 * (h as f64 * d - sum_d - xh_row[j] * sum_dx);
        }
    }
    for (a, d) in tape.grad_mut(gamma).iter_mut().zip(&dgamma) {
        *a += d;
    }
    for (a, d) in tape.grad_mut(beta).iter_mut().zip(&dbeta) {
        *a += d;
    }
    gx
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Size(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
