//! HiPPO-LegS transition matrix, its normal-plus-low-rank split and the
//! unitary conjugation to diagonal-plus-low-rank form.

use crate::error::{Error, Result};
use crate::numerics::{skew_eig, CMatrix, CVector, Complex, ONE, ZERO};

/// Dense HiPPO-LegS matrix (zero-based indices):
/// `A[n][k] = -sqrt(2n+1)·sqrt(2k+1)` below the diagonal, `-(n+1)` on it,
/// `0` above.
#[derive(Clone, Debug)]
pub struct HippoMatrix {
    pub n: usize,
    pub dense: CMatrix,
}

/// `A + p pᵀ = -½ I + S` with `S` skew-symmetric.
#[derive(Clone, Debug)]
pub struct NplrParts {
    pub p: CVector,
    pub s: CMatrix,
}

/// Diagonal-plus-low-rank dynamics `diag(lambda) - p q*` with input and
/// output vectors expressed in the eigenbasis of the skew part.
#[derive(Clone, Debug)]
pub struct DplrSystem {
    pub lambda: CVector,
    pub p: CVector,
    pub q: CVector,
    pub b: CVector,
    /// channels × n
    pub c: CMatrix,
    /// Eigenvectors of `S`; only kept for validation.
    pub unitary: CMatrix,
}

pub fn build_hippo(n: usize) -> Result<HippoMatrix> {
    if n == 0 {
        return Err(Error::Size("hippo state size must be positive".into()));
    }
    let dense = CMatrix::from_real(n, n, |i, k| {
        if i > k {
            -((2 * i + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt()
        } else if i == k {
            -((i + 1) as f64)
        } else {
            0.0
        }
    });
    Ok(HippoMatrix { n, dense })
}

pub fn nplr_decompose(h: &HippoMatrix) -> NplrParts {
    let n = h.n;
    let p: CVector = (0..n)
        .map(|k| Complex::new(((2 * k + 1) as f64 / 2.0).sqrt(), 0.0))
        .collect();
    // S = A + p pᵀ + ½ I; entries are formed directly from the closed form
    // so that S is exactly skew.
    let s = CMatrix::from_real(n, n, |i, k| {
        let g = 0.5 * ((2 * i + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt();
        match i.cmp(&k) {
            std::cmp::Ordering::Greater => -g,
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => g,
        }
    });
    NplrParts { p, s }
}

/// Residual `‖A + p pᵀ + ½I − S‖_F` of the normal-plus-low-rank identity.
pub fn nplr_residual(h: &HippoMatrix, parts: &NplrParts) -> f64 {
    let n = h.n;
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let half = if i == k { 0.5 } else { 0.0 };
            let v = h.dense[(i, k)] + parts.p[i] * parts.p[k] + half - parts.s[(i, k)];
            acc += v.norm_sqr();
        }
    }
    acc.sqrt()
}

/// Conjugates the NPLR form by the eigenvectors of `S`:
/// `A = V (Λ_S − ½I − (V*p)(V*p)*) V*`.
///
/// `b` is set to all ones and `c` to a single all-ones channel; callers
/// overwrite them as needed.
pub fn to_dplr(parts: &NplrParts) -> Result<DplrSystem> {
    let n = parts.p.len();
    let (eig, v) = skew_eig(&parts.s)?;
    let lambda: CVector = eig.iter().map(|w| Complex::new(-0.5, w.im)).collect();
    let p = v.adjoint().matvec(&parts.p)?;
    if !lambda.iter().chain(&p).all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::Numerical("non-finite DPLR factors".into()));
    }
    Ok(DplrSystem {
        lambda,
        q: p.clone(),
        p,
        b: vec![ONE; n],
        c: CMatrix::from_fn(1, n, |_, _| ONE),
        unitary: v,
    })
}

impl DplrSystem {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn channels(&self) -> usize {
        self.c.rows()
    }

    /// Dense dynamics `diag(lambda) − p q*`.
    pub fn dense_dynamics(&self) -> CMatrix {
        let n = self.n();
        CMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { self.lambda[i] } else { ZERO };
            d - self.p[i] * self.q[j].conj()
        })
    }

    /// `V (diag(lambda) − p q*) V*`, which should reproduce the HiPPO matrix.
    pub fn reconstruct(&self) -> Result<CMatrix> {
        self.unitary
            .matmul(&self.dense_dynamics())?
            .matmul(&self.unitary.adjoint())
    }

    /// Eigenvalues of `diag(lambda) − p q*` sorted by real part, descending.
    ///
    /// Roots of the secular function `1 + Σ conj(q_j) p_j / (μ − λ_j)`,
    /// found with Aberth's simultaneous iteration and a Newton polish.
    pub fn eigenvalues(&self) -> Result<CVector> {
        secular_eigenvalues(&self.lambda, &self.p, &self.q)
    }
}

fn secular_eigenvalues(lambda: &[Complex], p: &[Complex], q: &[Complex]) -> Result<CVector> {
    let n = lambda.len();
    let w: CVector = p.iter().zip(q).map(|(a, b)| a * b.conj()).collect();
    // Rational function g(μ) and g'(μ).
    let eval = |mu: Complex| -> (Complex, Complex, Complex) {
        let mut g = ONE;
        let mut dg = ZERO;
        let mut logd = ZERO;
        for (wj, lj) in w.iter().zip(lambda) {
            let inv = (mu - lj).inv();
            g += wj * inv;
            dg -= wj * inv * inv;
            logd += inv;
        }
        (g, dg, logd)
    };
    let radius = lambda.iter().map(|l| l.norm()).fold(0.0, f64::max)
        + w.iter().map(|x| x.norm()).sum::<f64>()
        + 1.0;
    let mut mu: CVector = (0..n)
        .map(|k| Complex::from_polar(radius, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64))
        .collect();
    for _ in 0..2000 {
        let mut biggest = 0.0f64;
        for k in 0..n {
            let (g, dg, logd) = eval(mu[k]);
            if g == ZERO {
                continue;
            }
            // p/p' for p(μ) = Π(μ − λ_j)·g(μ)
            let newton = g / (g * logd + dg);
            let repulse: Complex = (0..n)
                .filter(|&m| m != k)
                .map(|m| (mu[k] - mu[m]).inv())
                .sum();
            let step = newton / (ONE - newton * repulse);
            if step.re.is_finite() && step.im.is_finite() {
                mu[k] -= step;
                biggest = biggest.max(step.norm());
            }
        }
        if biggest <= 1e-15 * radius {
            break;
        }
    }
    for m in mu.iter_mut() {
        for _ in 0..3 {
            let (g, dg, _) = eval(*m);
            let step = g / dg;
            if step.re.is_finite() && step.im.is_finite() {
                *m -= step;
            }
        }
    }
    if !mu.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::Numerical("secular iteration diverged".into()));
    }
    mu.sort_by(|a, b| b.re.total_cmp(&a.re));
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hippo_small_cases() {
        let h = build_hippo(1).unwrap();
        assert_eq!(h.dense[(0, 0)], Complex::new(-1.0, 0.0));

        let h = build_hippo(3).unwrap();
        let expect = [
            [1.0, 0.0, 0.0],
            [1.7320508075688772, 2.0, 0.0],
            [2.23606797749979, 3.872983346207417, 3.0],
        ];
        for i in 0..3 {
            for k in 0..3 {
                assert!((h.dense[(i, k)].re + expect[i][k]).abs() < 1e-12);
                assert_eq!(h.dense[(i, k)].im, 0.0);
            }
        }
        assert!(matches!(build_hippo(0), Err(Error::Size(_))));
    }

    #[test]
    fn upper_triangle_is_zero() {
        let h = build_hippo(12).unwrap();
        for i in 0..12 {
            for k in i + 1..12 {
                assert_eq!(h.dense[(i, k)], ZERO);
            }
        }
    }

    #[test]
    fn nplr_parts_n3() {
        let parts = nplr_decompose(&build_hippo(3).unwrap());
        let expect = [0.7071067811865476, 1.224744871391589, 1.5811388300841898];
        for (p, e) in parts.p.iter().zip(expect) {
            assert!((p.re - e).abs() < 1e-12);
        }
        assert!((parts.s[(1, 0)].re + 0.5 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nplr_residual_n32() {
        let h = build_hippo(32).unwrap();
        let parts = nplr_decompose(&h);
        assert!(nplr_residual(&h, &parts) < 1e-10);
        assert!(parts.s.add(&parts.s.transpose()).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn dplr_scalar_case() {
        let d = to_dplr(&nplr_decompose(&build_hippo(1).unwrap())).unwrap();
        assert!((d.lambda[0] - Complex::new(-0.5, 0.0)).norm() < 1e-15);
        assert!((d.p[0].norm() - 0.7071067811865476).abs() < 1e-12);
    }

    #[test]
    fn dplr_real_parts_are_minus_half() {
        for n in [2, 4, 9, 33] {
            let d = to_dplr(&nplr_decompose(&build_hippo(n).unwrap())).unwrap();
            assert!(d.lambda.iter().all(|l| (l.re + 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn dplr_reconstructs_hippo() {
        for n in [4, 16, 32] {
            let h = build_hippo(n).unwrap();
            let d = to_dplr(&nplr_decompose(&h)).unwrap();
            let err = d.reconstruct().unwrap().sub(&h.dense).unwrap().frobenius_norm();
            assert!(err < 1e-10, "n={n}: {err:e}");
        }
    }

    // The HiPPO spectrum is extremely sensitive to perturbation; with f64
    // factors the conjugated spectrum is only recoverable for small n.
    #[test]
    fn dplr_spectrum_matches_for_small_n() {
        for n in 1..=8 {
            let d = to_dplr(&nplr_decompose(&build_hippo(n).unwrap())).unwrap();
            let eig = d.eigenvalues().unwrap();
            for (k, e) in eig.iter().enumerate() {
                assert!((e - Complex::new(-(k as f64 + 1.0), 0.0)).norm() < 1e-8, "n={n} k={k} {e}");
            }
        }
    }

    #[test]
    fn secular_solver_recovers_well_conditioned_spectrum() {
        // diag(lambda) − p p* with a small rank-one term is well conditioned;
        // compare with the Jacobi solver on the Hermitian matrix.
        let lambda: CVector = (0..6).map(|k| Complex::new(k as f64, 0.0)).collect();
        let p: CVector = (0..6).map(|k| Complex::new(0.1 * (k as f64 + 1.0), 0.05)).collect();
        let dense = CMatrix::from_fn(6, 6, |i, j| {
            (if i == j { lambda[i] } else { ZERO }) - p[i] * p[j].conj()
        });
        let (w, _) = crate::numerics::hermitian_eig(&dense).unwrap();
        let mut ours = secular_eigenvalues(&lambda, &p, &p).unwrap();
        ours.reverse();
        for (a, b) in ours.iter().zip(&w) {
            assert!((a - Complex::new(*b, 0.0)).norm() < 1e-10);
        }
    }
}
