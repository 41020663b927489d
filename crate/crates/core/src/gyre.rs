//! Time-periodic double-gyre flow, passive sensor advection and the
//! sensor-to-field datasets built from it.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::ByteReader;
use crate::error::{Error, Result};

pub const DOMAIN_X: f64 = 2.0;
pub const DOMAIN_Y: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GyreParams {
    pub amplitude: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub nx: usize,
    pub ny: usize,
    /// Use `vy = −∂ψ/∂x` instead of `+∂ψ/∂x`.
    pub flip_vy: bool,
}

impl Default for GyreParams {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            omega: 2.0 * PI,
            epsilon: 0.25,
            nx: 201,
            ny: 101,
            flip_vy: false,
        }
    }
}

impl GyreParams {
    pub fn desk() -> Self {
        Self {
            nx: 51,
            ny: 26,
            ..Self::default()
        }
    }

    /// Grid spacing along x (equal to the y spacing on the default grids).
    pub fn spacing(&self) -> f64 {
        DOMAIN_X / (self.nx - 1) as f64
    }

    pub fn grid_x(&self, i: usize) -> f64 {
        DOMAIN_X * i as f64 / (self.nx - 1) as f64
    }

    pub fn grid_y(&self, j: usize) -> f64 {
        DOMAIN_Y * j as f64 / (self.ny - 1) as f64
    }

    pub fn check(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!("grid {}x{} needs at least 2 points per axis", self.nx, self.ny)));
        }
        if !(self.amplitude.is_finite() && self.omega.is_finite() && self.epsilon.is_finite()) {
            return Err(Error::Config("gyre parameters must be finite".into()));
        }
        Ok(())
    }

    /// `f`, `∂f/∂x`, `∂²f/∂x²` at `(x, t)`.
    fn f_terms(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let s = self.epsilon * (self.omega * t).sin();
        (s * x * x + x - 2.0 * s * x, 2.0 * s * x + 1.0 - 2.0 * s, 2.0 * s)
    }
}

/// `ψ = A sin(πf(x,t)) sin(πy)`.
pub fn stream_function(p: &GyreParams, x: f64, y: f64, t: f64) -> f64 {
    let (f, _, _) = p.f_terms(x, t);
    p.amplitude * (PI * f).sin() * (PI * y).sin()
}

/// `(vx, vy) = (−∂ψ/∂y, ∂ψ/∂x)`.
pub fn velocity(p: &GyreParams, x: f64, y: f64, t: f64) -> (f64, f64) {
    let (f, fx, _) = p.f_terms(x, t);
    let vx = -PI * p.amplitude * (PI * f).sin() * (PI * y).cos();
    let vy = PI * p.amplitude * (PI * f).cos() * (PI * y).sin() * fx;
    (vx, if p.flip_vy { -vy } else { vy })
}

/// `∂vy/∂x − ∂vx/∂y` in closed form.
pub fn vorticity(p: &GyreParams, x: f64, y: f64, t: f64) -> f64 {
    let (f, fx, fxx) = p.f_terms(x, t);
    let a = p.amplitude;
    let sy = (PI * y).sin();
    let psi_xx = a * sy * (-PI * PI * (PI * f).sin() * fx * fx + PI * (PI * f).cos() * fxx);
    let psi_yy = -PI * PI * a * (PI * f).sin() * sy;
    let dvy_dx = if p.flip_vy { -psi_xx } else { psi_xx };
    dvy_dx + psi_yy
}

/// Vorticity on the grid, flattened with index `i·ny + j` for point
/// `(x_i, y_j)`.
pub fn vorticity_grid(p: &GyreParams, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.nx * p.ny);
    for i in 0..p.nx {
        let x = p.grid_x(i);
        for j in 0..p.ny {
            out.push(vorticity(p, x, p.grid_y(j), t));
        }
    }
    out
}

/// Largest speed over the grid at `samples` evenly spaced times of one
/// period.
pub fn max_speed(p: &GyreParams, samples: usize) -> f64 {
    let period = 2.0 * PI / p.omega;
    let mut best = 0.0f64;
    for k in 0..samples {
        let t = period * k as f64 / samples as f64;
        for i in 0..p.nx {
            for j in 0..p.ny {
                let (vx, vy) = velocity(p, p.grid_x(i), p.grid_y(j), t);
                best = best.max(vx.hypot(vy));
            }
        }
    }
    best
}

/// Largest central-difference divergence `∂vx/∂x + ∂vy/∂y` with step `h`
/// over the points `(x, y)` at time `t`.
pub fn max_divergence(p: &GyreParams, points: &[(f64, f64)], t: f64, h: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let dvx = (velocity(p, x + h, y, t).0 - velocity(p, x - h, y, t).0) / (2.0 * h);
            let dvy = (velocity(p, x, y + h, t).1 - velocity(p, x, y - h, t).1) / (2.0 * h);
            (dvx + dvy).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<(f64, f64)>,
    pub measurements: Vec<f64>,
}

fn clamp_domain((x, y): (f64, f64)) -> (f64, f64) {
    (x.clamp(0.0, DOMAIN_X), y.clamp(0.0, DOMAIN_Y))
}

fn rk4(p: &GyreParams, pos: (f64, f64), t: f64, h: f64) -> (f64, f64) {
    let (x, y) = pos;
    let k1 = velocity(p, x, y, t);
    let k2 = velocity(p, x + 0.5 * h * k1.0, y + 0.5 * h * k1.1, t + 0.5 * h);
    let k3 = velocity(p, x + 0.5 * h * k2.0, y + 0.5 * h * k2.1, t + 0.5 * h);
    let k4 = velocity(p, x + h * k3.0, y + h * k3.1, t + h);
    clamp_domain((
        x + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        y + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    ))
}

/// Integrates a passive sensor from `start` at time `t0` with `substeps`
/// RK4 steps per sample, recording position and vorticity every
/// `dt_sample` over `horizon` (both endpoints included).
pub fn advect(
    p: &GyreParams,
    start: (f64, f64),
    t0: f64,
    horizon: f64,
    dt_sample: f64,
    substeps: usize,
) -> Result<Trajectory> {
    if !(dt_sample > 0.0 && horizon >= 0.0) || substeps == 0 {
        return Err(Error::Config(format!(
            "advection needs dt_sample > 0, horizon >= 0, substeps >= 1 (got {dt_sample}, {horizon}, {substeps})"
        )));
    }
    let samples = (horizon / dt_sample).round() as usize + 1;
    let h = dt_sample / substeps as f64;
    let mut pos = clamp_domain(start);
    let mut times = Vec::with_capacity(samples);
    let mut positions = Vec::with_capacity(samples);
    let mut measurements = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = t0 + k as f64 * dt_sample;
        times.push(t);
        positions.push(pos);
        measurements.push(vorticity(p, pos.0, pos.1, t));
        if k + 1 < samples {
            for s in 0..substeps {
                pos = rk4(p, pos, t + s as f64 * h, h);
            }
        }
    }
    Ok(Trajectory {
        times,
        positions,
        measurements,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Clean,
    Noisy,
    Disturbed,
}

impl NoiseMode {
    pub const ALL: [NoiseMode; 3] = [NoiseMode::Clean, NoiseMode::Disturbed, NoiseMode::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::Clean => "clean",
            NoiseMode::Noisy => "noisy",
            NoiseMode::Disturbed => "disturbed",
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(NoiseMode::Clean),
            "noisy" => Ok(NoiseMode::Noisy),
            "disturbed" => Ok(NoiseMode::Disturbed),
            other => Err(Error::Config(format!("unknown noise mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Standard deviation of additive noise, in standardized units.
    pub sigma: f64,
    /// Offset of the corrupted entry, in units of the train standard
    /// deviation.
    pub disturbance_magnitude: f64,
    /// Corrupted step; the last real step when `None`.
    pub disturbance_step: Option<usize>,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            mode: NoiseMode::Clean,
            sigma: 0.1,
            disturbance_magnitude: 5.0,
            disturbance_step: None,
        }
    }

    pub fn with_mode(mode: NoiseMode) -> Self {
        Self { mode, ..Self::clean() }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.disturbance_magnitude.is_finite() {
            return Err(Error::Config("noise sigma must be >= 0 and magnitude finite".into()));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub gyre: GyreParams,
    pub counts: [usize; 3],
    pub horizon: f64,
    pub dt_sample: f64,
    pub substeps: usize,
    /// Evaluated (target) steps at the end of each sequence.
    pub t_eval: usize,
    /// Padded power-of-two sequence length.
    pub seq_len: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Laptop-sized preset: 51×26 grid, two periods, 256/64/64 samples.
    pub fn desk(seed: u64) -> Self {
        Self {
            gyre: GyreParams::desk(),
            counts: [256, 64, 64],
            horizon: 2.0,
            dt_sample: 0.005,
            substeps: 4,
            t_eval: 32,
            seq_len: 512,
            seed,
        }
    }

    /// Full-size preset: 201×101 grid, four periods, 2048/512/512 samples,
    /// second half evaluated.
    pub fn full(seed: u64) -> Self {
        Self {
            gyre: GyreParams::default(),
            counts: [2048, 512, 512],
            horizon: 4.0,
            dt_sample: 0.005,
            substeps: 4,
            t_eval: 401,
            seq_len: 1024,
            seed,
        }
    }

    pub fn real_len(&self) -> usize {
        (self.horizon / self.dt_sample).round() as usize + 1
    }

    pub fn check(&self) -> Result<()> {
        self.gyre.check()?;
        if self.counts.contains(&0) {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if self.substeps == 0 || !(self.dt_sample > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Config("horizon, dt_sample and substeps must be positive".into()));
        }
        let real = self.real_len();
        if !crate::numerics::is_power_of_two(self.seq_len) || self.seq_len < real {
            return Err(Error::Config(format!(
                "seq_len {} must be a power of two >= {real} steps",
                self.seq_len
            )));
        }
        if self.t_eval == 0 || self.t_eval > real {
            return Err(Error::Config(format!("t_eval {} outside 1..={real}", self.t_eval)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Header of a dataset file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetHeader {
    pub counts: [usize; 3],
    pub seq_len: usize,
    pub real_len: usize,
    pub t_eval: usize,
    pub feature_dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub meas_mean: f64,
    pub meas_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub dt_sample: f64,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn output_dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn input_len(&self) -> usize {
        self.real_len * self.feature_dim
    }

    pub fn target_len(&self) -> usize {
        self.t_eval * self.output_dim()
    }
}

impl fmt::Display for DatasetHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format: S4DS v{DATASET_VERSION}")?;
        writeln!(f, "train_count: {}", self.counts[0])?;
        writeln!(f, "val_count: {}", self.counts[1])?;
        writeln!(f, "test_count: {}", self.counts[2])?;
        writeln!(f, "seq_len: {}", self.seq_len)?;
        writeln!(f, "real_len: {}", self.real_len)?;
        writeln!(f, "t_eval: {}", self.t_eval)?;
        writeln!(f, "feature_dim: {}", self.feature_dim)?;
        writeln!(f, "grid: {}x{}", self.nx, self.ny)?;
        writeln!(f, "meas_mean: {:.12e}", self.meas_mean)?;
        writeln!(f, "meas_std: {:.12e}", self.meas_std)?;
        writeln!(f, "target_mean: {:.12e}", self.target_mean)?;
        writeln!(f, "target_std: {:.12e}", self.target_std)?;
        writeln!(f, "amplitude: {}", self.amplitude)?;
        writeln!(f, "omega: {}", self.omega)?;
        writeln!(f, "epsilon: {}", self.epsilon)?;
        writeln!(f, "horizon: {}", self.horizon)?;
        writeln!(f, "dt_sample: {}", self.dt_sample)?;
        write!(f, "seed: {}", self.seed)
    }
}

/// Standardized samples of one split: inputs `[measurement, x/2, y]` per
/// real step, targets the standardized vorticity field on the evaluated
/// steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub count: usize,
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorDataset {
    pub header: DatasetHeader,
    pub splits: [SplitData; 3],
}

impl SensorDataset {
    pub fn split(&self, s: Split) -> &SplitData {
        &self.splits[s.index()]
    }

    pub fn sample_inputs(&self, s: Split, i: usize) -> &[f32] {
        let n = self.header.input_len();
        &self.split(s).inputs[i * n..(i + 1) * n]
    }

    pub fn sample_targets(&self, s: Split, i: usize) -> &[f32] {
        let n = self.header.target_len();
        &self.split(s).targets[i * n..(i + 1) * n]
    }
}

/// Independent random stream for one (split, sample, purpose).
pub fn sample_rng(seed: u64, split: Split, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose & 0xff) << 56) | ((split.index() as u64) << 48) | index as u64);
    rng
}

struct RawSample {
    measurements: Vec<f64>,
    positions: Vec<(f64, f64)>,
    targets: Vec<f64>,
}

fn raw_sample(spec: &DatasetSpec, split: Split, index: usize) -> Result<RawSample> {
    let mut rng = sample_rng(spec.seed, split, index, 0);
    let start = (rng.random_range(0.0..DOMAIN_X), rng.random_range(0.0..DOMAIN_Y));
    let t0 = rng.random_range(0.0..1.0);
    let traj = advect(&spec.gyre, start, t0, spec.horizon, spec.dt_sample, spec.substeps)?;
    let real = traj.times.len();
    let mut targets = Vec::with_capacity(spec.t_eval * spec.gyre.nx * spec.gyre.ny);
    for k in real - spec.t_eval..real {
        targets.extend(vorticity_grid(&spec.gyre, traj.times[k]));
    }
    Ok(RawSample {
        measurements: traj.measurements,
        positions: traj.positions,
        targets,
    })
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt().max(1e-12))
}

pub fn standardize(v: f64, mean: f64, std: f64) -> f64 {
    (v - mean) / std
}

pub fn unstandardize(v: f64, mean: f64, std: f64) -> f64 {
    v * std + mean
}

/// Generates all three splits. Statistics come from the train split only;
/// `noise` is applied to the stored measurements of every split.
pub fn make_dataset(spec: &DatasetSpec, noise: &NoiseSpec) -> Result<SensorDataset> {
    spec.check()?;
    noise.check()?;
    let raw: Vec<Vec<RawSample>> = Split::ALL
        .iter()
        .map(|&s| {
            (0..spec.counts[s.index()])
                .into_par_iter()
                .map(|i| raw_sample(spec, s, i))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let (meas_mean, meas_std) = mean_std(raw[0].iter().flat_map(|r| r.measurements.iter()));
    let (target_mean, target_std) = mean_std(raw[0].iter().flat_map(|r| r.targets.iter()));
    let real_len = spec.real_len();
    let header = DatasetHeader {
        counts: spec.counts,
        seq_len: spec.seq_len,
        real_len,
        t_eval: spec.t_eval,
        feature_dim: 3,
        nx: spec.gyre.nx,
        ny: spec.gyre.ny,
        meas_mean,
        meas_std,
        target_mean,
        target_std,
        amplitude: spec.gyre.amplitude,
        omega: spec.gyre.omega,
        epsilon: spec.gyre.epsilon,
        horizon: spec.horizon,
        dt_sample: spec.dt_sample,
        seed: spec.seed,
    };
    let splits: Vec<SplitData> = Split::ALL
        .iter()
        .zip(&raw)
        .map(|(&s, samples)| {
            let mut inputs = Vec::with_capacity(samples.len() * header.input_len());
            let mut targets = Vec::with_capacity(samples.len() * header.target_len());
            for (i, r) in samples.iter().enumerate() {
                let mut meas: Vec<f64> = r
                    .measurements
                    .iter()
                    .map(|m| standardize(*m, meas_mean, meas_std))
                    .collect();
                apply_noise(&mut meas, noise, &mut sample_rng(spec.seed, s, i, 1));
                for (m, (x, y)) in meas.iter().zip(&r.positions) {
                    inputs.extend([*m as f32, (x / DOMAIN_X) as f32, (y / DOMAIN_Y) as f32]);
                }
                targets.extend(r.targets.iter().map(|v| standardize(*v, target_mean, target_std) as f32));
            }
            SplitData {
                count: samples.len(),
                inputs,
                targets,
            }
        })
        .collect();
    let [train, val, test]: [SplitData; 3] = splits.try_into().expect("three splits");
    Ok(SensorDataset {
        header,
        splits: [train, val, test],
    })
}

/// Corrupts a standardized measurement sequence in place: Gaussian noise of
/// `sigma` on every entry (noisy) or one offset of `±magnitude` at the
/// disturbance step (disturbed).
pub fn apply_noise<R: Rng + ?Sized>(meas: &mut [f64], noise: &NoiseSpec, rng: &mut R) {
    match noise.mode {
        NoiseMode::Clean => {}
        NoiseMode::Noisy => {
            for m in meas.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *m += noise.sigma * z;
            }
        }
        NoiseMode::Disturbed => {
            if meas.is_empty() {
                return;
            }
            let step = noise.disturbance_step.unwrap_or(meas.len() - 1).min(meas.len() - 1);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            meas[step] += sign * noise.disturbance_magnitude;
        }
    }
}

pub const DATASET_MAGIC: &[u8; 4] = b"S4DS";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(path: &Path, ds: &SensorDataset) -> Result<()> {
    let h = &ds.header;
    let mut buf = Vec::with_capacity(
        256 + ds.splits.iter().map(|s| (s.inputs.len() + s.targets.len()) * 4).sum::<usize>(),
    );
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [
        h.counts[0], h.counts[1], h.counts[2], h.seq_len, h.real_len, h.t_eval, h.feature_dim, h.nx, h.ny,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in [
        h.meas_mean,
        h.meas_std,
        h.target_mean,
        h.target_std,
        h.amplitude,
        h.omega,
        h.epsilon,
        h.horizon,
        h.dt_sample,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&h.seed.to_le_bytes());
    for (s, split) in Split::ALL.iter().zip(&ds.splits) {
        for i in 0..split.count {
            for v in ds.sample_inputs(*s, i).iter().chain(ds.sample_targets(*s, i)) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_header(r: &mut ByteReader<'_>, path: &Path) -> Result<DatasetHeader> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let magic = r.take(4).ok_or_else(|| fmt("truncated magic".into()))?;
    if magic != DATASET_MAGIC {
        return Err(fmt("bad magic, expected S4DS".into()));
    }
    let version = r.u32().ok_or_else(|| fmt("truncated version".into()))?;
    if version != DATASET_VERSION {
        return Err(fmt(format!("unsupported dataset version {version}")));
    }
    let mut ints = [0usize; 9];
    for v in ints.iter_mut() {
        *v = r.u64().ok_or_else(|| fmt("truncated header".into()))? as usize;
    }
    let mut reals = [0f64; 9];
    for v in reals.iter_mut() {
        *v = r.f64().ok_or_else(|| fmt("truncated header".into()))?;
    }
    let seed = r.u64().ok_or_else(|| fmt("truncated header".into()))?;
    Ok(DatasetHeader {
        counts: [ints[0], ints[1], ints[2]],
        seq_len: ints[3],
        real_len: ints[4],
        t_eval: ints[5],
        feature_dim: ints[6],
        nx: ints[7],
        ny: ints[8],
        meas_mean: reals[0],
        meas_std: reals[1],
        target_mean: reals[2],
        target_std: reals[3],
        amplitude: reals[4],
        omega: reals[5],
        epsilon: reals[6],
        horizon: reals[7],
        dt_sample: reals[8],
        seed,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Reads only the header of a dataset file.
pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    let mut head = vec![0u8; 4 + 4 + 9 * 8 + 9 * 8 + 8];
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let got = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    read_header(&mut ByteReader::new(&head[..got]), path)
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        let n = file.read(&mut buf[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    Ok(got)
}

pub fn read_dataset(path: &Path) -> Result<SensorDataset> {
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(&bytes);
    let header = read_header(&mut r, path)?;
    let fmt = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut splits = Vec::with_capacity(3);
    for count in header.counts {
        let mut inputs = Vec::with_capacity(count * header.input_len());
        let mut targets = Vec::with_capacity(count * header.target_len());
        for _ in 0..count {
            for _ in 0..header.input_len() {
                inputs.push(r.f32().ok_or_else(|| fmt("truncated sample inputs"))?);
            }
            for _ in 0..header.target_len() {
                targets.push(r.f32().ok_or_else(|| fmt("truncated sample targets"))?);
            }
        }
        splits.push(SplitData { count, inputs, targets });
    }
    if !r.done() {
        return Err(fmt("trailing bytes after the last sample"));
    }
    let [train, val, test]: [SplitData; 3] = splits.try_into().expect("three splits");
    Ok(SensorDataset {
        header,
        splits: [train, val, test],
    })
}
