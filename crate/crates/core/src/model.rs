//! SHRED-(r)S4D: a linear sensor encoder, a stack of diagonal S4D layers
//! (optionally led by a Butterworth-initialized filtering layer) and a
//! shallow fully connected decoder applied to the last evaluated steps.
//!
//! Each layer runs `SSM bank → GELU → mixing → residual → layer norm`. SSM
//! poles are parameterized as `a = −exp(ρ) + i·im` with `Δ = exp(log_dt)`,
//! discretized by zero-order hold and turned into kernels by Vandermonde
//! products; convolutions use zero-padded FFTs.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{
    gelu_backward, gelu_forward, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward,
    relu_backward, relu_forward, LayerNormCache, ParamGroup, ParamId, ParamTape,
};
use crate::error::{Error, Result};
use crate::init::{butterworth_residues, h2_norm, init_diagonal, InitKind, InitSpec};
use crate::kernel::{zoh_gain, DiagonalSsm};
use crate::numerics::{CMatrix, CVector, Complex, FftPlan, ONE, ZERO};
use crate::s4dc::{s4dc_train_step, XMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Features `H` carried through the recurrent stack.
    pub hidden: usize,
    /// State size `N` of every SSM.
    pub state: usize,
    /// Output channels `C` of every SSM.
    pub channels: usize,
    pub layers: Vec<InitKind>,
    /// Residual connection around Butterworth layers.
    pub bw_residual: bool,
    /// Butterworth layers start from the filter's partial-fraction residues
    /// instead of random `c`.
    pub bw_residues: bool,
    pub decoder_hidden: Vec<usize>,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Minimal-H2 constrained couplings.
    pub s4dc: bool,
}

impl ModelConfig {
    /// Plain S4D stack of `S4D-Lin` layers.
    pub fn s4d(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: 64,
            state: 64,
            channels: 1,
            layers: vec![InitKind::Lin, InitKind::Lin],
            bw_residual: false,
            bw_residues: true,
            decoder_hidden: vec![128, 128],
            dt_min: 1e-3,
            dt_max: 1e-1,
            s4dc: false,
        }
    }

    /// Robust stack: a Butterworth filtering layer followed by `S4D-Lin`.
    pub fn rs4d(input_dim: usize, output_dim: usize) -> Self {
        Self {
            layers: vec![InitKind::Bw, InitKind::Lin],
            ..Self::s4d(input_dim, output_dim)
        }
    }

    /// Exactly one Butterworth layer, in front, followed by at least one
    /// other layer.
    pub fn is_robust(&self) -> bool {
        self.layers.len() >= 2
            && self.layers[0] == InitKind::Bw
            && self.layers[1..].iter().all(|k| *k != InitKind::Bw)
    }

    pub fn check(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden == 0 || self.state == 0 || self.channels == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one S4D layer".into()));
        }
        if self.decoder_hidden.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::Config("dt range must be positive and ordered".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    rho: ParamId,
    im: ParamId,
    b_re: ParamId,
    b_im: ParamId,
    /// `c` normally, `x = b ∘ c` in S4DC mode; shape H × C × N.
    c_re: ParamId,
    c_im: ParamId,
    log_dt: ParamId,
    mix: LinearIds,
    ln_g: ParamId,
    ln_b: ParamId,
}

/// Discretized per-feature quantities reused by the backward pass.
#[derive(Clone, Debug)]
struct FeatureKernel {
    dt: f64,
    a: CVector,
    z: CVector,
    phi: CVector,
    b: CVector,
    /// C × N effective output couplings.
    c: Vec<CVector>,
    /// C kernels of length L.
    k: Vec<Vec<f64>>,
}

struct LayerRecord {
    kernels: Vec<FeatureKernel>,
    spectra: Vec<Vec<CVector>>,
    ssm_out: Array2<f64>,
    act: Array2<f64>,
    ln: LayerNormCache,
}

struct ForwardRecord {
    batch: usize,
    seq_len: usize,
    real_len: usize,
    t_eval: usize,
    input: Array2<f64>,
    layers: Vec<LayerRecord>,
    gathered: Array2<f64>,
    /// Decoder inputs and pre-activations.
    dec_inputs: Vec<Array2<f64>>,
    dec_pre: Vec<Array2<f64>>,
}

pub struct ShredModel {
    pub config: ModelConfig,
    pub tape: ParamTape,
    encoder: LinearIds,
    layers: Vec<LayerIds>,
    decoder: Vec<LinearIds>,
    record: Option<ForwardRecord>,
}

fn add_linear(tape: &mut ParamTape, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Result<LinearIds> {
    let bound = 1.0 / (inp as f64).sqrt();
    let w = (0..inp * out).map(|_| rng.random_range(-bound..bound)).collect();
    let b = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(LinearIds {
        w: tape.add(&format!("{name}.w"), &[out, inp], w, ParamGroup::Dense)?,
        b: tape.add(&format!("{name}.b"), &[out], b, ParamGroup::Dense)?,
    })
}

impl ShredModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = ParamTape::new();
        let (h, n, c) = (config.hidden, config.state, config.channels);
        let encoder = add_linear(&mut tape, "enc", config.input_dim, h, &mut rng)?;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (li, kind) in config.layers.iter().enumerate() {
            let spec = InitSpec {
                kind: *kind,
                n,
                channels: c,
                dt_min: config.dt_min,
                dt_max: config.dt_max,
            };
            let mut rho = Vec::with_capacity(h * n);
            let mut im = Vec::with_capacity(h * n);
            let mut b_re = Vec::with_capacity(h * n);
            let mut b_im = Vec::with_capacity(h * n);
            let mut c_re = Vec::with_capacity(h * c * n);
            let mut c_im = Vec::with_capacity(h * c * n);
            let mut log_dt = Vec::with_capacity(h);
            for _ in 0..h {
                let mut sys = init_diagonal(&spec, &mut rng)?;
                if *kind == InitKind::Bw && config.bw_residues {
                    let r = butterworth_residues(n, 1.0);
                    sys.c.row_mut(0).copy_from_slice(&r);
                }
                let coupling = if config.s4dc {
                    XMatrix::from_system(&sys)?.x.transpose()
                } else {
                    sys.c.clone()
                };
                for a in &sys.a {
                    rho.push((-a.re).ln());
                    im.push(a.im);
                }
                for b in &sys.b {
                    b_re.push(b.re);
                    b_im.push(b.im);
                }
                for v in coupling.data() {
                    c_re.push(v.re);
                    c_im.push(v.im);
                }
                log_dt.push(sys.log_dt);
            }
            let p = format!("l{li}");
            let coupling = if config.s4dc { "x" } else { "c" };
            let ids = LayerIds {
                rho: tape.add(&format!("{p}.rho"), &[h, n], rho, ParamGroup::Ssm)?,
                im: tape.add(&format!("{p}.im"), &[h, n], im, ParamGroup::Ssm)?,
                b_re: tape.add(&format!("{p}.b_re"), &[h, n], b_re, ParamGroup::Ssm)?,
                b_im: tape.add(&format!("{p}.b_im"), &[h, n], b_im, ParamGroup::Ssm)?,
                c_re: tape.add(&format!("{p}.{coupling}_re"), &[h, c, n], c_re, ParamGroup::Ssm)?,
                c_im: tape.add(&format!("{p}.{coupling}_im"), &[h, c, n], c_im, ParamGroup::Ssm)?,
                log_dt: tape.add(&format!("{p}.log_dt"), &[h], log_dt, ParamGroup::Ssm)?,
                mix: add_linear(&mut tape, &format!("{p}.mix"), h * c, h, &mut rng)?,
                ln_g: tape.add(&format!("{p}.ln.g"), &[h], vec![1.0; h], ParamGroup::Dense)?,
                ln_b: tape.add(&format!("{p}.ln.b"), &[h], vec![0.0; h], ParamGroup::Dense)?,
            };
            if config.s4dc {
                tape.set_detached(ids.c_re, true);
                tape.set_detached(ids.c_im, true);
            }
            layers.push(ids);
        }
        let mut decoder = Vec::new();
        let mut width = h;
        for (k, w) in config.decoder_hidden.iter().chain(std::iter::once(&config.output_dim)).enumerate() {
            decoder.push(add_linear(&mut tape, &format!("dec{k}"), width, *w, &mut rng)?);
            width = *w;
        }
        Ok(Self {
            config,
            tape,
            encoder,
            layers,
            decoder,
            record: None,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn residual(&self, layer: usize) -> bool {
        self.config.layers[layer] != InitKind::Bw || self.config.bw_residual
    }

    /// The continuous diagonal system of feature `feature` in layer `layer`,
    /// with `c` reconstructed from `x ⊘ b` in S4DC mode.
    pub fn ssm(&self, layer: usize, feature: usize) -> DiagonalSsm {
        let ids = &self.layers[layer];
        let (n, ch) = (self.config.state, self.config.channels);
        let t = &self.tape;
        let r = feature * n..(feature + 1) * n;
        let a: CVector = t.value(ids.rho)[r.clone()]
            .iter()
            .zip(&t.value(ids.im)[r.clone()])
            .map(|(rho, im)| Complex::new(-rho.exp(), *im))
            .collect();
        let b: CVector = t.value(ids.b_re)[r.clone()]
            .iter()
            .zip(&t.value(ids.b_im)[r])
            .map(|(re, im)| Complex::new(*re, *im))
            .collect();
        let base = feature * ch * n;
        let coupling = CMatrix::from_fn(ch, n, |i, j| {
            Complex::new(t.value(ids.c_re)[base + i * n + j], t.value(ids.c_im)[base + i * n + j])
        });
        let c = if self.config.s4dc {
            CMatrix::from_fn(ch, n, |i, j| coupling[(i, j)] / b[j])
        } else {
            coupling
        };
        DiagonalSsm {
            a,
            b,
            c,
            log_dt: t.value(ids.log_dt)[feature],
        }
    }

    /// Kernels of every feature of one layer: `[feature][channel][step]`.
    pub fn layer_kernels(&self, layer: usize, length: usize) -> Vec<Vec<Vec<f64>>> {
        (0..self.config.hidden)
            .map(|h| feature_kernel(&self.ssm(layer, h), length).k)
            .collect()
    }

    /// Runs the network on `batch` sequences of `seq_len` padded steps
    /// (rows `b·seq_len + t` of `inputs`), of which the first `real_len` are
    /// data. Returns predictions for the last `t_eval` real steps, rows
    /// `b·t_eval + k`, and records everything the backward pass needs.
    pub fn forward(
        &mut self,
        inputs: &Array2<f64>,
        batch: usize,
        seq_len: usize,
        real_len: usize,
        t_eval: usize,
    ) -> Result<Array2<f64>> {
        if inputs.nrows() != batch * seq_len || inputs.ncols() != self.config.input_dim {
            return Err(Error::Size(format!(
                "inputs are {}x{}, expected {}x{}",
                inputs.nrows(),
                inputs.ncols(),
                batch * seq_len,
                self.config.input_dim
            )));
        }
        if !crate::numerics::is_power_of_two(seq_len) {
            return Err(Error::Size(format!("sequence length {seq_len} is not a power of two")));
        }
        if t_eval == 0 || t_eval > real_len || real_len > seq_len {
            return Err(Error::Size(format!(
                "t_eval {t_eval} and real length {real_len} do not fit {seq_len} steps"
            )));
        }
        let plan = FftPlan::new(2 * seq_len)?;
        let mut x = linear_forward(inputs, self.tape.matrix(self.encoder.w), self.tape.value(self.encoder.b))?;
        let mut layer_records = Vec::with_capacity(self.layers.len());
        for (li, ids) in self.layers.iter().enumerate() {
            let kernels: Vec<FeatureKernel> = (0..self.config.hidden)
                .into_par_iter()
                .map(|h| feature_kernel(&self.ssm(li, h), seq_len))
                .collect();
            let (ssm_out, spectra) = ssm_bank_forward(&x, &kernels, batch, seq_len, &plan);
            let act = gelu_forward(&ssm_out);
            let mut r = linear_forward(&act, self.tape.matrix(ids.mix.w), self.tape.value(ids.mix.b))?;
            if self.residual(li) {
                r += &x;
            }
            let (y, ln) = layer_norm_forward(&r, self.tape.value(ids.ln_g), self.tape.value(ids.ln_b))?;
            layer_records.push(LayerRecord {
                kernels,
                spectra,
                ssm_out,
                act,
                ln,
            });
            x = y;
        }
        let gathered = gather_last(&x, batch, seq_len, real_len, t_eval);
        let mut dec_inputs = Vec::with_capacity(self.decoder.len());
        let mut dec_pre = Vec::with_capacity(self.decoder.len());
        let mut d = gathered.clone();
        for (k, ids) in self.decoder.iter().enumerate() {
            let pre = linear_forward(&d, self.tape.matrix(ids.w), self.tape.value(ids.b))?;
            dec_inputs.push(d);
            d = if k + 1 < self.decoder.len() { relu_forward(&pre) } else { pre.clone() };
            dec_pre.push(pre);
        }
        self.record = Some(ForwardRecord {
            batch,
            seq_len,
            real_len,
            t_eval,
            input: inputs.clone(),
            layers: layer_records,
            gathered,
            dec_inputs,
            dec_pre,
        });
        Ok(d)
    }

    /// Accumulates parameter gradients for the recorded forward pass given
    /// `∂loss/∂predictions`; consumes the record.
    pub fn backward(&mut self, grad_pred: &Array2<f64>) -> Result<()> {
        let rec = self
            .record
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let expect = rec.dec_pre.last().map(|p| p.dim()).unwrap_or_default();
        if grad_pred.dim() != expect {
            return Err(Error::Size(format!("gradient is {:?}, predictions are {:?}", grad_pred.dim(), expect)));
        }
        let mut g = grad_pred.clone();
        for k in (0..self.decoder.len()).rev() {
            if k + 1 < self.decoder.len() {
                g = relu_backward(&rec.dec_pre[k], &g);
            }
            let ids = self.decoder[k];
            g = linear_backward(&mut self.tape, &rec.dec_inputs[k], ids.w, ids.b, &g);
        }
        debug_assert_eq!(g.dim(), rec.gathered.dim());
        let mut gx = scatter_last(&g, rec.batch, rec.seq_len, rec.real_len, rec.t_eval, self.config.hidden);
        let plan = FftPlan::new(2 * rec.seq_len)?;
        for li in (0..self.layers.len()).rev() {
            let ids = self.layers[li];
            let lr = &rec.layers[li];
            let gr = layer_norm_backward(&mut self.tape, &lr.ln, ids.ln_g, ids.ln_b, &gx);
            let ga = linear_backward(&mut self.tape, &lr.act, ids.mix.w, ids.mix.b, &gr);
            let gs = gelu_backward(&lr.ssm_out, &ga);
            let (mut gu, kernel_grads) =
                ssm_bank_backward(&gs, &lr.kernels, &lr.spectra, rec.batch, rec.seq_len, &plan);
            if self.residual(li) {
                gu += &gr;
            }
            self.accumulate_kernel_grads(li, &lr.kernels, &kernel_grads);
            gx = gu;
        }
        linear_backward(&mut self.tape, &rec.input, self.encoder.w, self.encoder.b, &gx);
        self.tape.apply_detach();
        Ok(())
    }

    fn accumulate_kernel_grads(&mut self, layer: usize, kernels: &[FeatureKernel], grads: &[Vec<Vec<f64>>]) {
        let ids = self.layers[layer];
        let (n, ch) = (self.config.state, self.config.channels);
        let rho_vals = self.tape.value(ids.rho).to_vec();
        let per_feature: Vec<SsmGrad> = kernels
            .par_iter()
            .zip(grads.par_iter())
            .map(|(fk, gk)| kernel_param_grad(fk, gk))
            .collect();
        for (h, pg) in per_feature.iter().enumerate() {
            for j in 0..n {
                let idx = h * n + j;
                self.tape.grad_mut(ids.rho)[idx] += -rho_vals[idx].exp() * pg.a[j].re;
                self.tape.grad_mut(ids.im)[idx] += pg.a[j].im;
                self.tape.grad_mut(ids.b_re)[idx] += pg.b[j].re;
                self.tape.grad_mut(ids.b_im)[idx] += pg.b[j].im;
                for c in 0..ch {
                    let cidx = (h * ch + c) * n + j;
                    self.tape.grad_mut(ids.c_re)[cidx] += pg.c[c][j].re;
                    self.tape.grad_mut(ids.c_im)[cidx] += pg.c[c][j].im;
                }
            }
            self.tape.grad_mut(ids.log_dt)[h] += kernels[h].dt * pg.dt;
        }
    }

    /// In S4DC mode, advances every coupling `X` by one shifted power step
    /// on the H2 matrix of its current poles. No-op otherwise.
    pub fn s4dc_update(&mut self) -> Result<()> {
        if !self.config.s4dc {
            return Ok(());
        }
        let (n, ch) = (self.config.state, self.config.channels);
        for li in 0..self.layers.len() {
            let ids = self.layers[li];
            for h in 0..self.config.hidden {
                let sys = self.ssm(li, h);
                let base = h * ch * n;
                let x = CMatrix::from_fn(n, ch, |j, c| {
                    Complex::new(self.tape.value(ids.c_re)[base + c * n + j], self.tape.value(ids.c_im)[base + c * n + j])
                });
                let (_, x_new) = s4dc_train_step(&sys, &XMatrix { x }, |_| Ok(()))?;
                for c in 0..ch {
                    for j in 0..n {
                        let v = x_new.x[(j, c)];
                        self.tape.value_mut(ids.c_re)[base + c * n + j] = v.re;
                        self.tape.value_mut(ids.c_im)[base + c * n + j] = v.im;
                    }
                }
            }
        }
        Ok(())
    }

    /// Mean squared H2 norm over the SSMs of each layer.
    pub fn layer_h2(&self) -> Result<Vec<f64>> {
        (0..self.layers.len())
            .map(|li| {
                let mut acc = 0.0;
                for h in 0..self.config.hidden {
                    acc += h2_norm(&self.ssm(li, h))?.norm_sq;
                }
                Ok(acc / self.config.hidden as f64)
            })
            .collect()
    }

    /// True when every pole has a negative real part.
    pub fn is_stable(&self) -> bool {
        (0..self.layers.len()).all(|li| (0..self.config.hidden).all(|h| self.ssm(li, h).is_hurwitz()))
    }
}

/// ZOH discretization and Vandermonde kernel of one feature.
fn feature_kernel(sys: &DiagonalSsm, length: usize) -> FeatureKernel {
    let dt = sys.dt();
    let n = sys.n();
    let mut z = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for a in &sys.a {
        let zj = (a * dt).exp();
        z.push(zj);
        phi.push(zoh_gain(*a, dt, zj));
    }
    let c: Vec<CVector> = (0..sys.channels()).map(|i| sys.c.row(i).to_vec()).collect();
    let k = c
        .iter()
        .map(|ci| {
            let mut w: CVector = (0..n).map(|j| ci[j] * sys.b[j] * phi[j]).collect();
            let mut out = vec![0.0; length];
            for o in out.iter_mut() {
                let mut s = 0.0;
                for (wj, zj) in w.iter_mut().zip(&z) {
                    s += wj.re;
                    *wj *= zj;
                }
                *o = s;
            }
            out
        })
        .collect();
    FeatureKernel {
        dt,
        a: sys.a.clone(),
        z,
        phi,
        b: sys.b.clone(),
        c,
        k,
    }
}

struct SsmGrad {
    a: CVector,
    b: CVector,
    c: Vec<CVector>,
    dt: f64,
}

/// Chain rule from kernel gradients to `a`, `b`, `c`, `Δ` of one feature.
///
/// Complex gradients follow `∂f/∂Re + i·∂f/∂Im`; through a holomorphic map
/// `v = h(w)` this gives `grad_w = conj(h'(w))·grad_v`.
fn kernel_param_grad(fk: &FeatureKernel, gk: &[Vec<f64>]) -> SsmGrad {
    let n = fk.z.len();
    let channels = fk.c.len();
    let length = gk[0].len();
    let mut ga = vec![ZERO; n];
    let mut gb = vec![ZERO; n];
    let mut gc = vec![vec![ZERO; n]; channels];
    let mut gdt = 0.0;
    for j in 0..n {
        let z = fk.z[j];
        let zc = z.conj();
        let bb = fk.b[j] * fk.phi[j];
        let mut gz = ZERO;
        let mut gbb = ZERO;
        for c in 0..channels {
            let g = &gk[c];
            // S0 = Σ g_l conj(z)^l, S1 = Σ g_l·l·conj(z)^{l−1}
            let mut s0 = ZERO;
            let mut s1 = ZERO;
            let mut pw = ONE;
            let mut prev = ZERO;
            for (l, gl) in g.iter().enumerate().take(length) {
                s0 += pw * *gl;
                if l > 0 {
                    s1 += prev * (*gl * l as f64);
                }
                prev = pw;
                pw *= zc;
            }
            let w = fk.c[c][j] * bb;
            gc[c][j] = s0 * bb.conj();
            gbb += s0 * fk.c[c][j].conj();
            gz += s1 * w.conj();
        }
        let a = fk.a[j];
        let dt = fk.dt;
        gb[j] = gbb * fk.phi[j].conj();
        let gphi = gbb * fk.b[j].conj();
        let dphi_da = if a.norm() < 1e-12 {
            Complex::new(dt * dt / 2.0, 0.0)
        } else {
            (z * a * dt - (z - ONE)) / (a * a)
        };
        ga[j] = gz * (z * dt).conj() + gphi * dphi_da.conj();
        gdt += (gz.conj() * a * z).re + (gphi.conj() * z).re;
    }
    SsmGrad { a: ga, b: gb, c: gc, dt: gdt }
}

/// Causal FFT convolution of every feature column with its channel
/// kernels. Output column `h·C + c` holds channel `c` of feature `h`.
/// Also returns the cached input spectra `[feature][batch]`.
fn ssm_bank_forward(
    x: &Array2<f64>,
    kernels: &[FeatureKernel],
    batch: usize,
    seq_len: usize,
    plan: &FftPlan,
) -> (Array2<f64>, Vec<Vec<CVector>>) {
    let channels = kernels.first().map(|k| k.k.len()).unwrap_or(1);
    let per_feature: Vec<(Vec<Vec<f64>>, Vec<CVector>)> = kernels
        .par_iter()
        .enumerate()
        .map(|(h, fk)| {
            let kf: Vec<CVector> = fk.k.iter().map(|k| plan.forward_real(k)).collect();
            let mut outs = vec![Vec::with_capacity(batch * seq_len); channels];
            let mut spectra = Vec::with_capacity(batch);
            let mut col = vec![0.0; seq_len];
            let mut buf = vec![ZERO; 2 * seq_len];
            for b in 0..batch {
                for (t, v) in col.iter_mut().enumerate() {
                    *v = x[(b * seq_len + t, h)];
                }
                let uf = plan.forward_real(&col);
                for (c, k) in kf.iter().enumerate() {
                    for ((o, u), kk) in buf.iter_mut().zip(&uf).zip(k) {
                        *o = u * kk;
                    }
                    plan.inverse(&mut buf);
                    outs[c].extend(buf[..seq_len].iter().map(|v| v.re));
                }
                spectra.push(uf);
            }
            (outs, spectra)
        })
        .collect();
    let h_count = kernels.len();
    let mut y = Array2::zeros((batch * seq_len, h_count * channels));
    let mut spectra = Vec::with_capacity(h_count);
    for (h, (outs, sp)) in per_feature.into_iter().enumerate() {
        for (c, o) in outs.iter().enumerate() {
            for (r, v) in o.iter().enumerate() {
                y[(r, h * channels + c)] = *v;
            }
        }
        spectra.push(sp);
    }
    (y, spectra)
}

/// Input gradient (batch·L × H) and kernel gradients `[feature][channel][step]`.
fn ssm_bank_backward(
    gy: &Array2<f64>,
    kernels: &[FeatureKernel],
    spectra: &[Vec<CVector>],
    batch: usize,
    seq_len: usize,
    plan: &FftPlan,
) -> (Array2<f64>, Vec<Vec<Vec<f64>>>) {
    let channels = kernels.first().map(|k| k.k.len()).unwrap_or(1);
    let per_feature: Vec<(Vec<f64>, Vec<Vec<f64>>)> = kernels
        .par_iter()
        .enumerate()
        .map(|(h, fk)| {
            let kf: Vec<CVector> = fk.k.iter().map(|k| plan.forward_real(k)).collect();
            let mut gu = vec![0.0; batch * seq_len];
            let mut acc = vec![vec![ZERO; 2 * seq_len]; channels];
            let mut col = vec![0.0; seq_len];
            let mut buf = vec![ZERO; 2 * seq_len];
            for b in 0..batch {
                let uf = &spectra[h][b];
                for c in 0..channels {
                    for (t, v) in col.iter_mut().enumerate() {
                        *v = gy[(b * seq_len + t, h * channels + c)];
                    }
                    let gf = plan.forward_real(&col);
                    for (((o, g), k), (a, u)) in buf.iter_mut().zip(&gf).zip(&kf[c]).zip(acc[c].iter_mut().zip(uf)) {
                        *o = g * k.conj();
                        *a += g * u.conj();
                    }
                    plan.inverse(&mut buf);
                    for (t, v) in buf[..seq_len].iter().enumerate() {
                        gu[b * seq_len + t] += v.re;
                    }
                }
            }
            let gk = acc
                .into_iter()
                .map(|mut a| {
                    plan.inverse(&mut a);
                    a[..seq_len].iter().map(|v| v.re).collect()
                })
                .collect();
            (gu, gk)
        })
        .collect();
    let mut gx = Array2::zeros((batch * seq_len, kernels.len()));
    let mut gks = Vec::with_capacity(kernels.len());
    for (h, (gu, gk)) in per_feature.into_iter().enumerate() {
        for (r, v) in gu.iter().enumerate() {
            gx[(r, h)] = *v;
        }
        gks.push(gk);
    }
    (gx, gks)
}

/// Causal convolution of one real sequence with each channel kernel of a
/// diagonal system (the SSM bank for a single feature).
pub fn ssm_bank_apply(sys: &DiagonalSsm, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    let fk = feature_kernel(sys, input.len());
    fk.k.iter().map(|k| crate::kernel::apply_kernel_fft(k, input)).collect()
}

fn gather_last(x: &Array2<f64>, batch: usize, seq_len: usize, real_len: usize, t_eval: usize) -> Array2<f64> {
    let mut out = Array2::zeros((batch * t_eval, x.ncols()));
    for b in 0..batch {
        for k in 0..t_eval {
            let src = b * seq_len + real_len - t_eval + k;
            out.row_mut(b * t_eval + k).assign(&x.row(src));
        }
    }
    out
}

fn scatter_last(
    g: &Array2<f64>,
    batch: usize,
    seq_len: usize,
    real_len: usize,
    t_eval: usize,
    width: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros((batch * seq_len, width));
    for b in 0..batch {
        for k in 0..t_eval {
            let dst = b * seq_len + real_len - t_eval + k;
            out.row_mut(dst).assign(&g.row(b * t_eval + k));
        }
    }
    out
}

/// Mean squared error over the last `t_eval` steps of batch × steps ×
/// outputs tensors, and its gradient with respect to `pred`.
pub fn loss_last_t(pred: &Array3<f64>, targets: &Array3<f64>, t_eval: usize) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != targets.dim() {
        return Err(Error::Size(format!("predictions {:?} vs targets {:?}", pred.dim(), targets.dim())));
    }
    let (bsz, steps, out) = pred.dim();
    if t_eval == 0 || t_eval > steps {
        return Err(Error::Size(format!("t_eval {t_eval} outside 1..={steps}")));
    }
    let count = (bsz * t_eval * out) as f64;
    let mut grad = Array3::zeros(pred.dim());
    let mut loss = 0.0;
    for b in 0..bsz {
        for t in steps - t_eval..steps {
            for o in 0..out {
                let d = pred[(b, t, o)] - targets[(b, t, o)];
                loss += d * d;
                grad[(b, t, o)] = 2.0 * d / count;
            }
        }
    }
    Ok((loss / count, grad))
}
