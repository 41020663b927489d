use super::{dot, norm, CMatrix, CVector, Complex, I, ZERO};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Rotates `v` so that its first nonzero entry lies on the positive real axis.
pub(crate) fn fix_phase(v: &mut [Complex]) {
    let scale = norm(v);
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.norm() > 1e-12 * scale) {
        let rot = first.conj() / first.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Orthonormal basis of the column space of `m` (the Q factor of a thin QR).
///
/// Columns are produced by Gram-Schmidt with one reorthogonalization pass,
/// then each column gets the phase convention of [`fix_phase`].
pub fn qr_orthonormalize(m: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows < cols || cols == 0 {
        return Err(Error::Size(format!("qr of a {rows}x{cols} matrix needs rows >= cols >= 1")));
    }
    let mut q = CMatrix::zeros(rows, cols);
    let mut basis: Vec<CVector> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = m.col(j);
        let original = norm(&v);
        if original == 0.0 || !original.is_finite() {
            return Err(Error::Degenerate(format!("column {j} is zero or non-finite")));
        }
        for _ in 0..2 {
            for e in &basis {
                let proj = dot(e, &v);
                for (x, y) in v.iter_mut().zip(e) {
                    *x -= proj * y;
                }
            }
        }
        let remaining = norm(&v);
        if remaining <= 1e-12 * original {
            return Err(Error::Degenerate(format!("column {j} is linearly dependent")));
        }
        for x in v.iter_mut() {
            *x /= remaining;
        }
        fix_phase(&mut v);
        q.set_col(j, &v);
        basis.push(v);
    }
    Ok(q)
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Eigenvalues ascend; eigenvectors are the matching columns.
pub fn hermitian_eig(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if !m.is_square() {
        return Err(Error::Size(format!("eigen of a {}x{} matrix", m.rows(), m.cols())));
    }
    let defect = m.hermitian_defect();
    if defect > SYMMETRY_TOL * m.frobenius_norm().max(1.0) {
        return Err(Error::Symmetry(format!("matrix is not Hermitian (defect {defect:e})")));
    }
    let n = m.rows();
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    let mut v = CMatrix::identity(n);
    let fro = a.frobenius_norm();
    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * fro || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged {
        return Err(Error::Numerical("jacobi sweeps did not converge".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// One Jacobi rotation annihilating `a[p][q]`; accumulates into `v`.
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let n = a.rows();
    let phase = apq / r;
    let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // U restricted to (p, q): phase fix diag(1, e^{-iφ}) followed by a real rotation.
    let upp = Complex::new(c, 0.0);
    let upq = Complex::new(s, 0.0);
    let uqp = -phase.conj() * s;
    let uqq = phase.conj() * c;
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * upp + akq * uqp;
        a[(k, q)] = akp * upq + akq * uqq;
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * upp + vkq * uqp;
        v[(k, q)] = vkp * upq + vkq * uqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
        a[(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;
}

/// Eigen-decomposition `m = V Λ V*` of a real skew-symmetric matrix, via the
/// Hermitian matrix `i·m`. Eigenvalues are purely imaginary.
pub fn skew_eig(m: &CMatrix) -> Result<(CVector, CMatrix)> {
    if !m.is_square() {
        return Err(Error::Size(format!("eigen of a {}x{} matrix", m.rows(), m.cols())));
    }
    let scale = m.frobenius_norm().max(1.0);
    let n = m.rows();
    for i in 0..n {
        for j in 0..n {
            let x = m[(i, j)];
            if x.im.abs() > SYMMETRY_TOL * scale || (x.re + m[(j, i)].re).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Symmetry(format!("matrix is not real skew-symmetric at ({i},{j})")));
            }
        }
    }
    let (w, v) = hermitian_eig(&m.scale(I))?;
    // i·m·v = w·v  =>  m·v = -i·w·v
    let values = w.iter().map(|x| Complex::new(0.0, -x)).collect();
    Ok((values, v))
}
