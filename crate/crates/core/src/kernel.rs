//! Discretization and convolution kernels of linear state-space systems.
//!
//! Three independent routes produce the same kernel
//! `K̄ = (C̄B̄, C̄ĀB̄, …, C̄Ā^{L−1}B̄)`:
//! - [`kernel_naive`] steps the state through `Ā` (dense or diagonal),
//! - [`kernel_vandermonde`] evaluates powers of a diagonal `Ā` directly,
//! - [`kernel_dplr_genfun`] evaluates the truncated generating function at
//!   the roots of unity with Cauchy sums and a Woodbury correction, then
//!   inverts the DFT.

use crate::error::{Error, Result};
use crate::hippo::DplrSystem;
use crate::numerics::{
    cauchy_dot, fft, rfft_convolve, vandermonde_dot, CMatrix, CVector, Complex, ONE, ZERO,
};

/// One diagonal continuous-time system `x' = diag(a) x + b u`, `y = c x`,
/// with step size `exp(log_dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSsm {
    pub a: CVector,
    pub b: CVector,
    /// channels × n
    pub c: CMatrix,
    pub log_dt: f64,
}

impl DiagonalSsm {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn channels(&self) -> usize {
        self.c.rows()
    }

    pub fn dt(&self) -> f64 {
        self.log_dt.exp()
    }

    pub fn is_hurwitz(&self) -> bool {
        self.a.iter().all(|x| x.re < 0.0)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || self.b.len() != n || self.c.cols() != n || self.c.rows() == 0 {
            return Err(Error::Size(format!(
                "diagonal system with {} poles, {} inputs, {}x{} outputs",
                n,
                self.b.len(),
                self.c.rows(),
                self.c.cols()
            )));
        }
        if !self.is_hurwitz() {
            return Err(Error::Stability("Re(a) must be negative".into()));
        }
        Ok(())
    }

    /// `b ∘ c_i` for one output channel.
    pub fn coupling(&self, channel: usize) -> CVector {
        self.b.iter().zip(self.c.row(channel)).map(|(b, c)| b * c).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    Diagonal(CVector),
    Dense(CMatrix),
}

impl Dynamics {
    pub fn n(&self) -> usize {
        match self {
            Dynamics::Diagonal(d) => d.len(),
            Dynamics::Dense(m) => m.rows(),
        }
    }

    pub fn apply(&self, x: &[Complex]) -> Result<CVector> {
        match self {
            Dynamics::Diagonal(d) => Ok(d.iter().zip(x).map(|(a, v)| a * v).collect()),
            Dynamics::Dense(m) => m.matvec(x),
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            Dynamics::Diagonal(d) => CMatrix::diag(d),
            Dynamics::Dense(m) => m.clone(),
        }
    }
}

/// General continuous-time single-input system.
#[derive(Clone, Debug)]
pub struct ContinuousSsm {
    pub a: Dynamics,
    pub b: CVector,
    pub c: CMatrix,
}

impl From<&DiagonalSsm> for ContinuousSsm {
    fn from(s: &DiagonalSsm) -> Self {
        Self {
            a: Dynamics::Diagonal(s.a.clone()),
            b: s.b.clone(),
            c: s.c.clone(),
        }
    }
}

impl From<&DplrSystem> for ContinuousSsm {
    fn from(s: &DplrSystem) -> Self {
        Self {
            a: Dynamics::Dense(s.dense_dynamics()),
            b: s.b.clone(),
            c: s.c.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Dynamics,
    pub b_bar: CVector,
    pub c_bar: CMatrix,
    pub dt: f64,
}

impl DiscreteSsm {
    pub fn n(&self) -> usize {
        self.a_bar.n()
    }

    pub fn channels(&self) -> usize {
        self.c_bar.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelPath {
    Naive,
    Vandermonde,
    DplrGenfun,
}

/// Real convolution kernel, one row per output channel.
#[derive(Clone, Debug)]
pub struct ConvKernel {
    pub length: usize,
    pub values: Vec<Vec<f64>>,
    pub path: KernelPath,
}

impl ConvKernel {
    /// Largest absolute entrywise difference to another kernel.
    pub fn max_abs_diff(&self, other: &ConvKernel) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, channel: usize, input: &[f64]) -> Result<Vec<f64>> {
        apply_kernel_fft(&self.values[channel], input)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Size(format!("step size {dt} must be positive")))
    }
}

/// Bilinear (Tustin) discretization:
/// `Ā = (I − dt/2·A)⁻¹(I + dt/2·A)`, `B̄ = (I − dt/2·A)⁻¹·dt·B`, `C̄ = C`.
pub fn discretize_bilinear(sys: &ContinuousSsm, dt: f64) -> Result<DiscreteSsm> {
    check_dt(dt)?;
    let h = dt / 2.0;
    let (a_bar, b_bar) = match &sys.a {
        Dynamics::Diagonal(a) => {
            let mut ab = Vec::with_capacity(a.len());
            let mut bb = Vec::with_capacity(a.len());
            for (aj, bj) in a.iter().zip(&sys.b) {
                let den = ONE - aj * h;
                if den.norm() < 1e-14 {
                    return Err(Error::Singular(format!("1 - dt/2·a vanishes for a = {aj}")));
                }
                ab.push((ONE + aj * h) / den);
                bb.push(bj * dt / den);
            }
            (Dynamics::Diagonal(ab), bb)
        }
        Dynamics::Dense(a) => {
            let n = a.rows();
            let id = CMatrix::identity(n);
            let back = id.sub(&a.scale(Complex::new(h, 0.0)))?;
            let fwd = id.add(&a.scale(Complex::new(h, 0.0)))?;
            let ab = back.solve(&fwd)?;
            let rhs = CMatrix::column(&sys.b.iter().map(|x| x * dt).collect::<Vec<_>>());
            let bb = back.solve(&rhs)?.col(0);
            (Dynamics::Dense(ab), bb)
        }
    };
    Ok(DiscreteSsm {
        a_bar,
        b_bar,
        c_bar: sys.c.clone(),
        dt,
    })
}

/// Zero-order-hold discretization of a diagonal system:
/// `ā = exp(dt·a)`, `b̄ = (exp(dt·a) − 1)/a · b`.
pub fn discretize_zoh(sys: &DiagonalSsm, dt: f64) -> Result<DiscreteSsm> {
    check_dt(dt)?;
    let mut ab = Vec::with_capacity(sys.n());
    let mut bb = Vec::with_capacity(sys.n());
    for (a, b) in sys.a.iter().zip(&sys.b) {
        let z = (a * dt).exp();
        ab.push(z);
        bb.push(zoh_gain(*a, dt, z) * b);
    }
    Ok(DiscreteSsm {
        a_bar: Dynamics::Diagonal(ab),
        b_bar: bb,
        c_bar: sys.c.clone(),
        dt,
    })
}

/// `(exp(dt·a) − 1)/a`, with the series limit `dt` near `a = 0`.
pub(crate) fn zoh_gain(a: Complex, dt: f64, z: Complex) -> Complex {
    if a.norm() < 1e-12 {
        Complex::new(dt, 0.0) + a * (dt * dt / 2.0)
    } else {
        (z - ONE) / a
    }
}

/// Reference kernel: step the state `x ← Ā x` from `x = B̄`.
pub fn kernel_naive(d: &DiscreteSsm, length: usize) -> Result<ConvKernel> {
    let channels = d.channels();
    let mut values = vec![Vec::with_capacity(length); channels];
    let mut x = d.b_bar.clone();
    for l in 0..length {
        let y = d.c_bar.matvec(&x)?;
        for (row, v) in values.iter_mut().zip(&y) {
            row.push(v.re);
        }
        if l + 1 < length {
            x = d.a_bar.apply(&x)?;
        }
    }
    Ok(ConvKernel {
        length,
        values,
        path: KernelPath::Naive,
    })
}

/// Diagonal kernel as a Vandermonde product with weights `b̄ ∘ c̄_i`.
pub fn kernel_vandermonde(d: &DiscreteSsm, length: usize) -> Result<ConvKernel> {
    let Dynamics::Diagonal(a_bar) = &d.a_bar else {
        return Err(Error::State("vandermonde kernel needs diagonal dynamics".into()));
    };
    let values = (0..d.channels())
        .map(|i| {
            let w: CVector = d.b_bar.iter().zip(d.c_bar.row(i)).map(|(b, c)| b * c).collect();
            vandermonde_dot(a_bar, &w, length).map(|k| k.iter().map(|v| v.re).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ConvKernel {
        length,
        values,
        path: KernelPath::Vandermonde,
    })
}

/// Output matrix `C̃ = C(I − Ā^L)` of the bilinear-discretized DPLR system,
/// the parameterization consumed by [`kernel_dplr_genfun`].
pub fn dplr_c_tilde(sys: &DplrSystem, dt: f64, length: usize) -> Result<CMatrix> {
    let d = discretize_bilinear(&ContinuousSsm::from(sys), dt)?;
    let n = sys.n();
    let trunc = CMatrix::identity(n).sub(&d.a_bar.to_dense().pow(length)?)?;
    sys.c.matmul(&trunc)
}

/// Kernel of a DPLR system through its generating function.
///
/// `sys.c` is read as `C̃ = C̄(I − Ā^L)`. At each root of unity
/// `z = exp(−2πik/L)` the resolvent `R(z) = (2/dt·(1−z)/(1+z) − Λ)⁻¹` enters
/// through four Cauchy sums; the rank-one correction is the Woodbury scalar
/// `(1 + Q*R P)⁻¹`. The node `z = −1` (present for even `L`) uses the limit
/// `K̂(−1) = dt/2 · C̃B`.
pub fn kernel_dplr_genfun(sys: &DplrSystem, dt: f64, length: usize) -> Result<ConvKernel> {
    check_dt(dt)?;
    if !crate::numerics::is_power_of_two(length) {
        return Err(Error::Size(format!("kernel length {length} is not a power of two")));
    }
    let n = sys.n();
    if sys.p.len() != n || sys.q.len() != n || sys.b.len() != n || sys.c.cols() != n {
        return Err(Error::Size("DPLR factor lengths disagree".into()));
    }
    let qb: CVector = sys.q.iter().zip(&sys.b).map(|(q, b)| q.conj() * b).collect();
    let qp: CVector = sys.q.iter().zip(&sys.p).map(|(q, p)| q.conj() * p).collect();
    let mut values = Vec::with_capacity(sys.channels());
    for ch in 0..sys.channels() {
        let c = sys.c.row(ch);
        let cb: CVector = c.iter().zip(&sys.b).map(|(c, b)| c * b).collect();
        let cp: CVector = c.iter().zip(&sys.p).map(|(c, p)| c * p).collect();
        let mut spectrum = Vec::with_capacity(length);
        for k in 0..length {
            let z = root_of_unity(k, length);
            let onep = ONE + z;
            if onep.norm() < 1e-12 {
                spectrum.push(cb.iter().sum::<Complex>() * (dt / 2.0));
                continue;
            }
            let g = (ONE - z) / onep * (2.0 / dt);
            let k00 = cauchy_dot(&cb, &sys.lambda, g)?;
            let k01 = cauchy_dot(&cp, &sys.lambda, g)?;
            let k10 = cauchy_dot(&qb, &sys.lambda, g)?;
            let k11 = cauchy_dot(&qp, &sys.lambda, g)?;
            let denom = ONE + k11;
            if denom.norm() < 1e-12 {
                return Err(Error::Singular(format!("woodbury scalar vanishes at node {k}")));
            }
            spectrum.push((k00 - k01 * k10 / denom) * (Complex::new(2.0, 0.0) / onep));
        }
        let kernel = fft(&spectrum, true)?;
        values.push(kernel.iter().map(|v| v.re).collect());
    }
    Ok(ConvKernel {
        length,
        values,
        path: KernelPath::DplrGenfun,
    })
}

/// `exp(−2πik/L)`, exact at the quarter points.
pub(crate) fn root_of_unity(k: usize, length: usize) -> Complex {
    let k = k % length;
    if 4 * k % length == 0 {
        match 4 * k / length {
            0 => return ONE,
            1 => return Complex::new(0.0, -1.0),
            2 => return Complex::new(-1.0, 0.0),
            _ => return Complex::new(0.0, 1.0),
        }
    }
    Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / length as f64)
}

/// `(diag(shift − lambda) + p q*)⁻¹ rhs` via the Woodbury identity.
pub fn woodbury_solve(
    lambda: &[Complex],
    p: &[Complex],
    q: &[Complex],
    shift: Complex,
    rhs: &[Complex],
) -> Result<CVector> {
    let n = lambda.len();
    if p.len() != n || q.len() != n || rhs.len() != n {
        return Err(Error::Size("woodbury operands have different lengths".into()));
    }
    let mut dinv = Vec::with_capacity(n);
    for l in lambda {
        let d = shift - l;
        if d.norm() < 1e-300 {
            return Err(Error::Singular(format!("shift equals eigenvalue {l}")));
        }
        dinv.push(d.inv());
    }
    let y: CVector = rhs.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let z: CVector = p.iter().zip(&dinv).map(|(p, d)| p * d).collect();
    let qz: Complex = q.iter().zip(&z).map(|(q, z)| q.conj() * z).sum();
    let qy: Complex = q.iter().zip(&y).map(|(q, y)| q.conj() * y).sum();
    let denom = ONE + qz;
    if denom.norm() < 1e-12 {
        return Err(Error::Singular("woodbury scalar 1 + q*D⁻¹p vanishes".into()));
    }
    let f = qy / denom;
    Ok(y.iter().zip(&z).map(|(y, z)| y - z * f).collect())
}

/// `state' = Ā·state + B̄·input`, `output = Re(C̄·state')`.
pub fn recurrence_step(d: &DiscreteSsm, state: &[Complex], input: f64) -> Result<(CVector, Vec<f64>)> {
    if state.len() != d.n() {
        return Err(Error::Size(format!("state length {} vs system size {}", state.len(), d.n())));
    }
    let mut next = d.a_bar.apply(state)?;
    for (x, b) in next.iter_mut().zip(&d.b_bar) {
        *x += b * input;
    }
    let out = d.c_bar.matvec(&next)?.iter().map(|v| v.re).collect();
    Ok((next, out))
}

/// Runs [`recurrence_step`] over a whole input sequence from a zero state.
pub fn run_recurrence(d: &DiscreteSsm, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut state = vec![ZERO; d.n()];
    let mut outputs = vec![Vec::with_capacity(input.len()); d.channels()];
    for u in input {
        let (next, y) = recurrence_step(d, &state, *u)?;
        state = next;
        for (o, v) in outputs.iter_mut().zip(y) {
            o.push(v);
        }
    }
    Ok(outputs)
}

/// Causal convolution `y = K̄ ∗ u` through a zero-padded FFT.
pub fn apply_kernel_fft(kernel: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    rfft_convolve(kernel, input)
}
