//! Diagonal initializations, Butterworth references, transfer functions and
//! H2 norms of diagonal systems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hippo::{build_hippo, nplr_decompose, to_dplr};
use crate::kernel::DiagonalSsm;
use crate::numerics::{CMatrix, CVector, Complex, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Lin,
    Inv,
    Legs,
    Bw,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::Lin => "s4d_lin",
            InitKind::Inv => "s4d_inv",
            InitKind::Legs => "s4d_legs",
            InitKind::Bw => "s4d_bw",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s4d_lin" | "lin" => Ok(InitKind::Lin),
            "s4d_inv" | "inv" => Ok(InitKind::Inv),
            "s4d_legs" | "legs" => Ok(InitKind::Legs),
            "s4d_bw" | "bw" => Ok(InitKind::Bw),
            other => Err(Error::Config(format!("unknown init kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub n: usize,
    pub channels: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl InitSpec {
    pub fn new(kind: InitKind, n: usize) -> Self {
        Self {
            kind,
            n,
            channels: 1,
            dt_min: 1e-3,
            dt_max: 1e-1,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.channels == 0 {
            return Err(Error::Size("init needs n >= 1 and at least one channel".into()));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::Config(format!(
                "dt range [{}, {}] is not a positive interval",
                self.dt_min, self.dt_max
            )));
        }
        Ok(())
    }
}

/// Poles of an initialization family before any step-size scaling.
pub fn init_poles(kind: InitKind, n: usize) -> Result<CVector> {
    if n == 0 {
        return Err(Error::Size("state size must be positive".into()));
    }
    let nf = n as f64;
    Ok(match kind {
        InitKind::Lin => (0..n).map(|k| Complex::new(-0.5, PI * k as f64)).collect(),
        InitKind::Inv => (0..n)
            .map(|k| Complex::new(-0.5, nf / PI * (nf / (2 * k + 1) as f64 - 1.0)))
            .collect(),
        InitKind::Legs => to_dplr(&nplr_decompose(&build_hippo(n)?))?.lambda,
        InitKind::Bw => butterworth_poles(n, 1.0),
    })
}

/// Fresh diagonal system: poles per `spec.kind`, `b` all ones, each channel
/// of `c` complex normal with variance `1/n`, and `log_dt` log-uniform in
/// `[dt_min, dt_max]`.
pub fn init_diagonal<R: Rng + ?Sized>(spec: &InitSpec, rng: &mut R) -> Result<DiagonalSsm> {
    spec.check()?;
    let a = init_poles(spec.kind, spec.n)?;
    let normal = Normal::new(0.0, (0.5 / spec.n as f64).sqrt()).expect("positive std");
    let c = CMatrix::from_fn(spec.channels, spec.n, |_, _| {
        Complex::new(normal.sample(rng), normal.sample(rng))
    });
    let (lo, hi) = (spec.dt_min.ln(), spec.dt_max.ln());
    let log_dt = if hi > lo { rng.random_range(lo..hi) } else { lo };
    Ok(DiagonalSsm {
        a,
        b: vec![ONE; spec.n],
        c,
        log_dt,
    })
}

/// `ω_c · exp(i(2k+N−1)π/2N)` for `k = 1..N`.
pub fn butterworth_poles(n: usize, omega_c: f64) -> CVector {
    let nf = n as f64;
    (1..=n)
        .map(|k| Complex::from_polar(omega_c, (2.0 * k as f64 + nf - 1.0) * PI / (2.0 * nf)))
        .collect()
}

/// Product form `G(s) = Π ω_c/(s − p_k)` of the normalized low-pass filter.
pub fn butterworth_reference(n: usize, omega_c: f64) -> impl Fn(Complex) -> Complex {
    let poles = butterworth_poles(n, omega_c);
    move |s| poles.iter().fold(ONE, |acc, p| acc * omega_c / (s - p))
}

/// Partial-fraction residues of the Butterworth product:
/// `r_k = ω_c^N / Π_{m≠k}(p_k − p_m)`.
pub fn butterworth_residues(n: usize, omega_c: f64) -> CVector {
    let poles = butterworth_poles(n, omega_c);
    let gain = omega_c.powi(n as i32);
    (0..n)
        .map(|k| {
            let den = (0..n)
                .filter(|&m| m != k)
                .fold(ONE, |acc, m| acc * (poles[k] - poles[m]));
            Complex::new(gain, 0.0) / den
        })
        .collect()
}

/// Diagonal system realizing the Butterworth filter exactly: poles on the
/// circle of radius `omega_c`, `b` all ones, `c` the residues, `Δ = 1`.
pub fn butterworth_system(n: usize, omega_c: f64) -> DiagonalSsm {
    DiagonalSsm {
        a: butterworth_poles(n, omega_c),
        b: vec![ONE; n],
        c: CMatrix::from_vec(1, n, butterworth_residues(n, omega_c)).expect("1×n residues"),
        log_dt: 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferSample {
    pub omega: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

impl TransferSample {
    pub fn magnitude(&self) -> f64 {
        10f64.powf(self.magnitude_db / 20.0)
    }
}

/// `Σ_j c_j b_j / (iω/Δ − a_j)` for one output channel.
pub fn transfer_response(sys: &DiagonalSsm, channel: usize, omega: f64) -> Result<Complex> {
    let s = Complex::new(0.0, omega / sys.dt());
    let mut acc = ZERO;
    for (j, a) in sys.a.iter().enumerate() {
        let d = s - a;
        if d.norm() <= 1e-14 * a.norm().max(1.0) {
            return Err(Error::Singular(format!("pole {a} on the imaginary axis at ω = {omega}")));
        }
        acc += sys.c[(channel, j)] * sys.b[j] / d;
    }
    Ok(acc)
}

/// Magnitude and phase of every output channel at frequency `omega`; the
/// frequency axis is scaled by `1/Δ` so that it reflects the effective
/// cutoff of the discretized system.
pub fn transfer_eval(sys: &DiagonalSsm, omega: f64) -> Result<Vec<TransferSample>> {
    (0..sys.channels())
        .map(|ch| {
            let g = transfer_response(sys, ch, omega)?;
            Ok(TransferSample {
                omega,
                magnitude_db: 20.0 * g.norm().log10(),
                phase_deg: g.arg().to_degrees(),
            })
        })
        .collect()
}

/// `per_decade` log-spaced frequencies from `lo` to `hi`, both included.
pub fn bode_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || per_decade == 0 {
        return Err(Error::Config(format!("bode range [{lo}, {hi}] with {per_decade} points per decade")));
    }
    let steps = ((hi / lo).log10() * per_decade as f64).round() as usize;
    Ok((0..=steps)
        .map(|k| lo * 10f64.powf(k as f64 / per_decade as f64))
        .collect())
}

/// Bode samples of one channel over `grid`, with the phase unwrapped along
/// the grid.
pub fn bode_response(sys: &DiagonalSsm, channel: usize, grid: &[f64]) -> Result<Vec<TransferSample>> {
    let mut out: Vec<TransferSample> = Vec::with_capacity(grid.len());
    for &omega in grid {
        let g = transfer_response(sys, channel, omega)?;
        let mut phase = g.arg().to_degrees();
        if let Some(prev) = out.last() {
            phase += 360.0 * ((prev.phase_deg - phase) / 360.0).round();
        }
        out.push(TransferSample {
            omega,
            magnitude_db: 20.0 * g.norm().log10(),
            phase_deg: phase,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct H2Report {
    pub m: CMatrix,
    pub norm_sq: f64,
    pub per_channel: Vec<f64>,
}

/// `M_ij = −1/(conj(a_i) + a_j)`, Hermitian positive definite for Hurwitz
/// `a`, arranged so that `x* M x` with `x = b ∘ c` is the squared norm of the
/// impulse response `Σ x_j e^{a_j t}`.
pub fn h2_matrix(a: &[Complex]) -> Result<CMatrix> {
    if let Some(bad) = a.iter().find(|x| !(x.re < 0.0)) {
        return Err(Error::Stability(format!("pole {bad} is not in the open left half-plane")));
    }
    let n = a.len();
    Ok(CMatrix::from_fn(n, n, |i, j| -(a[i].conj() + a[j]).inv()))
}

/// `x* M x`.
pub fn quadratic_form(m: &CMatrix, x: &[Complex]) -> Result<f64> {
    let mx = m.matvec(x)?;
    Ok(x.iter().zip(&mx).map(|(a, b)| (a.conj() * b).re).sum())
}

/// Squared H2 norm `Σ_i x_i* M x_i` with `x_i = b ∘ c_i`.
pub fn h2_norm(sys: &DiagonalSsm) -> Result<H2Report> {
    sys.check()?;
    let m = h2_matrix(&sys.a)?;
    let per_channel = (0..sys.channels())
        .map(|ch| quadratic_form(&m, &sys.coupling(ch)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(H2Report {
        norm_sq: per_channel.iter().sum(),
        m,
        per_channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::hermitian_eig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn one_pole(a: Complex, b: Complex, cc: Complex) -> DiagonalSsm {
        DiagonalSsm {
            a: vec![a],
            b: vec![b],
            c: CMatrix::from_vec(1, 1, vec![cc]).unwrap(),
            log_dt: 0.0,
        }
    }

    fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DiagonalSsm {
        DiagonalSsm {
            a: (0..n).map(|_| c(-rng.random_range(0.2..2.0), rng.random_range(-3.0..3.0))).collect(),
            b: (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
            c: CMatrix::from_fn(1, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
            log_dt: 0.0,
        }
    }

    // Trapezoid rule for ∫_0^T |Σ x_j e^{a_j t}|² dt.
    fn h2_quadrature(sys: &DiagonalSsm) -> f64 {
        let x = sys.coupling(0);
        let decay = sys.a.iter().map(|a| -a.re).fold(f64::INFINITY, f64::min);
        let t_end = 40.0 / decay;
        let steps = 400_000;
        let h = t_end / steps as f64;
        let step: Vec<Complex> = sys.a.iter().map(|a| (a * h).exp()).collect();
        let mut terms = x.clone();
        let mut acc = 0.0;
        for k in 0..=steps {
            let v: Complex = terms.iter().sum();
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += w * v.norm_sqr();
            for (t, s) in terms.iter_mut().zip(&step) {
                *t *= s;
            }
        }
        acc * h
    }

    #[test]
    fn lin_and_inv_poles() {
        let a = init_poles(InitKind::Lin, 4).unwrap();
        let expect = [c(-0.5, 0.0), c(-0.5, 3.1415927), c(-0.5, 6.2831853), c(-0.5, 9.4247780)];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).norm() < 1e-6);
        }
        let a = init_poles(InitKind::Inv, 4).unwrap();
        assert!((a[0] - c(-0.5, 3.8197186)).norm() < 1e-6);
        for kind in [InitKind::Lin, InitKind::Inv] {
            assert!(init_poles(kind, 17).unwrap().iter().all(|x| x.re == -0.5));
        }
    }

    #[test]
    fn bw_poles() {
        let a = init_poles(InitKind::Bw, 2).unwrap();
        let r = 0.5f64.sqrt();
        assert!((a[0] - c(-r, r)).norm() < 1e-7);
        assert!((a[1] - c(-r, -r)).norm() < 1e-7);
        for n in 1..=16 {
            for p in init_poles(InitKind::Bw, n).unwrap() {
                assert!((p.norm() - 1.0).abs() < 1e-12 && p.re < 0.0);
            }
        }
    }

    #[test]
    fn legs_poles_match_dplr() {
        let a = init_poles(InitKind::Legs, 8).unwrap();
        assert!(a.iter().all(|x| (x.re + 0.5).abs() < 1e-12));
    }

    #[test]
    fn init_diagonal_is_seeded_and_in_range() {
        let spec = InitSpec {
            channels: 3,
            ..InitSpec::new(InitKind::Lin, 16)
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let s1 = init_diagonal(&spec, &mut r1).unwrap();
        let s2 = init_diagonal(&spec, &mut r2).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.dt() >= 1e-3 && s1.dt() <= 1e-1);
        assert!(s1.b.iter().all(|b| *b == ONE));
        assert_eq!(s1.c.rows(), 3);

        let bad = InitSpec {
            dt_min: 0.2,
            dt_max: 0.1,
            ..spec
        };
        assert!(init_diagonal(&bad, &mut r1).is_err());
        assert!("s4d_bw".parse::<InitKind>().is_ok());
        assert!("chebyshev".parse::<InitKind>().is_err());
    }

    #[test]
    fn c_variance_is_one_over_n() {
        let spec = InitSpec {
            channels: 400,
            ..InitSpec::new(InitKind::Inv, 8)
        };
        let sys = init_diagonal(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let var = sys.c.data().iter().map(|x| x.norm_sqr()).sum::<f64>() / sys.c.data().len() as f64;
        assert!((var - 1.0 / 8.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn butterworth_reference_values() {
        let g = butterworth_reference(2, 1.0);
        assert!((g(ZERO).norm() - 1.0).abs() < 1e-12);
        assert!((g(c(0.0, 1.0)).norm() - 0.5f64.sqrt()).abs() < 1e-12);
        let g4 = butterworth_reference(4, 1.0);
        assert!((g4(c(0.0, 10.0)).norm() / 1e-4 - 1.0).abs() < 0.05);
        for w in [0.1f64, 0.7, 2.0, 5.0] {
            let expect = (1.0 + w.powi(8)).powf(-0.5);
            assert!((g4(c(0.0, w)).norm() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn residue_system_matches_product_form() {
        for n in [1, 2, 3, 4, 8] {
            let sys = butterworth_system(n, 1.0);
            let g = butterworth_reference(n, 1.0);
            for w in [0.0, 0.3, 1.0, 3.0] {
                let x = transfer_response(&sys, 0, w).unwrap();
                assert!((x - g(c(0.0, w))).norm() < 1e-10, "n={n} w={w}");
            }
            let dc = transfer_eval(&sys, 0.0).unwrap()[0];
            assert!((dc.magnitude() - 1.0).abs() < 1e-10);
            let cut = transfer_eval(&sys, 1.0).unwrap()[0];
            assert!((cut.magnitude() - 0.5f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn transfer_examples() {
        let sys = one_pole(c(-1.0, 0.0), ONE, ONE);
        let s = transfer_eval(&sys, 0.0).unwrap()[0];
        assert!((s.magnitude() - 1.0).abs() < 1e-12 && s.phase_deg.abs() < 1e-12);
        let s = transfer_eval(&sys, 1.0).unwrap()[0];
        assert!((s.magnitude() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((s.phase_deg + 45.0).abs() < 1e-10);

        let pure = one_pole(c(0.0, 2.0), ONE, ONE);
        assert!(matches!(transfer_eval(&pure, 2.0), Err(Error::Singular(_))));
    }

    #[test]
    fn transfer_scales_frequency_by_step() {
        let mut sys = butterworth_system(4, 1.0);
        sys.log_dt = 0.01f64.ln();
        let cut = transfer_eval(&sys, 0.01).unwrap()[0];
        assert!((cut.magnitude() - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn conjugate_pair_phase_is_odd() {
        let sys = DiagonalSsm {
            a: vec![c(-0.3, 2.0), c(-0.3, -2.0)],
            b: vec![ONE; 2],
            c: CMatrix::from_vec(1, 2, vec![c(0.5, 0.2), c(0.5, -0.2)]).unwrap(),
            log_dt: 0.0,
        };
        for w in [0.1, 1.0, 2.5] {
            let p = transfer_eval(&sys, w).unwrap()[0];
            let m = transfer_eval(&sys, -w).unwrap()[0];
            assert!((p.phase_deg + m.phase_deg).abs() < 1e-9);
            assert!((p.magnitude_db - m.magnitude_db).abs() < 1e-9);
        }
    }

    #[test]
    fn bode_grid_spacing() {
        let g = bode_grid(1e-2, 1e4, 200).unwrap();
        assert_eq!(g.len(), 1201);
        assert!((g[0] - 1e-2).abs() < 1e-15 && (g[1200] / 1e4 - 1.0).abs() < 1e-12);
        assert!(bode_grid(1.0, 0.5, 10).is_err());

        // unwrapped phase of an eighth-order low-pass falls monotonically
        // toward −720°
        let g = bode_grid(1e-2, 1e1, 200).unwrap();
        let resp = bode_response(&butterworth_system(8, 1.0), 0, &g).unwrap();
        assert!(resp.windows(2).all(|w| w[1].phase_deg < w[0].phase_deg));
        let last = resp.last().unwrap().phase_deg;
        assert!(last < -600.0 && last > -720.0, "{last}");
    }

    #[test]
    fn h2_examples() {
        let r = h2_norm(&one_pole(c(-1.0, 0.0), ONE, c(2.0, 0.0))).unwrap();
        assert!((r.norm_sq - 2.0).abs() < 1e-14);

        let sys = DiagonalSsm {
            a: vec![c(-0.5, PI), c(-0.5, -PI)],
            b: vec![ONE; 2],
            c: CMatrix::from_fn(1, 2, |_, _| ONE),
            log_dt: 0.0,
        };
        let r = h2_norm(&sys).unwrap();
        assert!((r.m[(0, 0)] - ONE).norm() < 1e-14 && (r.m[(1, 1)] - ONE).norm() < 1e-14);

        let unstable = one_pole(c(0.1, 0.0), ONE, ONE);
        assert!(matches!(h2_norm(&unstable), Err(Error::Stability(_))));
    }

    #[test]
    fn h2_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [1, 3, 8] {
            let sys = random_hurwitz(&mut rng, n);
            let closed = h2_norm(&sys).unwrap().norm_sq;
            let quad = h2_quadrature(&sys);
            assert!(((closed - quad) / closed).abs() < 1e-4, "n={n}: {closed} vs {quad}");
        }
    }

    #[test]
    fn m_matrix_is_hermitian_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let sys = random_hurwitz(&mut rng, 10);
            let m = h2_matrix(&sys.a).unwrap();
            assert!(m.hermitian_defect() < 1e-12);
            let (w, v) = hermitian_eig(&m).unwrap();
            assert!(w[0] > 0.0);
            // random unit vectors never beat the smallest eigenvalue
            for _ in 0..20 {
                let x: CVector = (0..10).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                let s = crate::numerics::norm(&x);
                let x: CVector = x.iter().map(|v| v / s).collect();
                assert!(quadratic_form(&m, &x).unwrap() >= w[0] - 1e-12);
            }
            assert!((quadratic_form(&m, &v.col(0)).unwrap() - w[0]).abs() < 1e-10 * w[9]);
        }
    }

    #[test]
    fn h2_scale_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sys = random_hurwitz(&mut rng, 6);
        let alpha = c(0.3, 1.7);
        let mut scaled = sys.clone();
        scaled.b = sys.b.iter().map(|b| b * alpha).collect();
        scaled.c = sys.c.scale(alpha.inv());
        let a = h2_norm(&sys).unwrap().norm_sq;
        let b = h2_norm(&scaled).unwrap().norm_sq;
        assert!(((a - b) / a).abs() < 1e-12);
    }
}
