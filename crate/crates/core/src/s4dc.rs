//! Minimal-H2 constrained training: the coupling `X = B ∘ C` is driven
//! toward the smallest eigenvectors of the H2 matrix `M` by an
//! orthogonalized shifted power iteration interleaved with gradient steps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::init::{h2_matrix, quadratic_form};
use crate::kernel::DiagonalSsm;
use crate::numerics::{qr_orthonormalize, CMatrix, Complex};

/// `n × channels`, column `i` holding `b ∘ c_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct XMatrix {
    pub x: CMatrix,
}

impl XMatrix {
    /// Orthonormalized copy of `x`.
    pub fn orthonormal(x: &CMatrix) -> Result<Self> {
        Ok(Self {
            x: qr_orthonormalize(x)?,
        })
    }

    /// Orthonormalized standard complex normal start.
    pub fn random<R: Rng + ?Sized>(n: usize, channels: usize, rng: &mut R) -> Result<Self> {
        let x = CMatrix::from_fn(n, channels, |_, _| {
            Complex::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        Self::orthonormal(&x)
    }

    /// Columns `b ∘ c_i` of a system, orthonormalized.
    pub fn from_system(sys: &DiagonalSsm) -> Result<Self> {
        let x = CMatrix::from_fn(sys.n(), sys.channels(), |j, ch| sys.b[j] * sys.c[(ch, j)]);
        Self::orthonormal(&x)
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn channels(&self) -> usize {
        self.x.cols()
    }

    /// `‖X*X − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.x.adjoint().matmul(&self.x).expect("square gram");
        g.sub(&CMatrix::identity(self.channels())).expect("same shape").frobenius_norm()
    }

    /// `x_i* M x_i` per column.
    pub fn h2_values(&self, m: &CMatrix) -> Result<Vec<f64>> {
        (0..self.channels()).map(|i| quadratic_form(m, &self.x.col(i))).collect()
    }

    /// `c = x ⊘ b`, one row per channel.
    pub fn output_matrix(&self, b: &[Complex]) -> Result<CMatrix> {
        if b.len() != self.n() {
            return Err(Error::Size(format!("b has {} entries, X has {} rows", b.len(), self.n())));
        }
        if let Some(j) = b.iter().position(|v| v.norm() == 0.0) {
            return Err(Error::Division(format!("b[{j}] is zero")));
        }
        Ok(CMatrix::from_fn(self.channels(), self.n(), |ch, j| self.x[(j, ch)] / b[j]))
    }
}

/// One step `X ← QR((M − ‖M‖_F I) X)`; since `‖M‖₂ ≤ ‖M‖_F` the shifted
/// matrix is negative semidefinite and its dominant directions are the
/// smallest eigenvectors of `M`.
pub fn shifted_power_step(x: &XMatrix, m: &CMatrix) -> Result<XMatrix> {
    if !m.is_square() || m.rows() != x.n() {
        return Err(Error::Size(format!(
            "M is {}x{} but X has {} rows",
            m.rows(),
            m.cols(),
            x.n()
        )));
    }
    let shift = Complex::new(m.frobenius_norm(), 0.0);
    let shifted = m.sub(&CMatrix::identity(m.rows()).scale(shift))?;
    XMatrix::orthonormal(&shifted.matmul(&x.x)?)
}

/// One training step: rebuild `c = X ⊘ b`, let `grad_hook` update `a`, `b`
/// and `log_dt` (changes it makes to `c` are discarded), then advance `X`
/// by one shifted power step on the updated `M`.
pub fn s4dc_train_step<F>(sys: &DiagonalSsm, x: &XMatrix, mut grad_hook: F) -> Result<(DiagonalSsm, XMatrix)>
where
    F: FnMut(&mut DiagonalSsm) -> Result<()>,
{
    let mut next = sys.clone();
    next.c = x.output_matrix(&sys.b)?;
    grad_hook(&mut next)?;
    let m = h2_matrix(&next.a)?;
    let x_new = shifted_power_step(x, &m)?;
    next.c = x_new.output_matrix(&next.b)?;
    Ok((next, x_new))
}
