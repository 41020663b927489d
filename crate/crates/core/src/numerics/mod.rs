//! Complex scalars, small dense complex matrices, FFT and the structured
//! sums (Vandermonde, Cauchy) that the kernel code is built on.

mod fft;
mod linalg;
mod structured;

use std::ops::{Index, IndexMut};

pub use fft::{fft, rfft_convolve, FftPlan};
pub use linalg::{hermitian_eig, qr_orthonormalize, skew_eig};
#[cfg(test)]
pub(crate) use linalg::fix_phase;
pub use structured::{cauchy_dot, vandermonde_dot};

use crate::error::{Error, Result};

pub type Complex = num_complex::Complex64;
pub type CVector = Vec<Complex>;

pub const ZERO: Complex = Complex::new(0.0, 0.0);
pub const ONE: Complex = Complex::new(1.0, 0.0);
pub const I: Complex = Complex::new(0.0, 1.0);

/// Dense complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Size(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self::from_fn(rows, cols, |i, j| Complex::new(f(i, j), 0.0))
    }

    pub fn diag(values: &[Complex]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Single column matrix.
    pub fn column(values: &[Complex]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> CVector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[Complex]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: Complex) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(Complex, Complex) -> Complex) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Size(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Size(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[Complex]) -> Result<CVector> {
        if self.cols != v.len() {
            return Err(Error::Size(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Solves `self * x = rhs` by LU decomposition with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if !self.is_square() || rhs.rows != self.rows {
            return Err(Error::Size(format!(
                "solve with {}x{} system and {}x{} right-hand side",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut x = rhs.clone();
        let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (piv, pmag) = (k..n)
                .map(|i| (i, a[(i, k)].norm()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmag <= 1e-14 * scale {
                return Err(Error::Singular(format!("pivot {k} vanishes")));
            }
            if piv != k {
                for j in 0..n {
                    a.data.swap(k * n + j, piv * n + j);
                }
                for j in 0..x.cols {
                    x.data.swap(k * x.cols + j, piv * x.cols + j);
                }
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                if f == ZERO {
                    continue;
                }
                for j in k..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= f * akj;
                }
                for j in 0..x.cols {
                    let xkj = x[(k, j)];
                    x[(i, j)] -= f * xkj;
                }
            }
        }
        for k in (0..n).rev() {
            let pivot = a[(k, k)];
            for j in 0..x.cols {
                let mut s = x[(k, j)];
                for m in k + 1..n {
                    s -= a[(k, m)] * x[(m, j)];
                }
                x[(k, j)] = s / pivot;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// `self^power` by repeated squaring.
    pub fn pow(&self, mut power: usize) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Size("power of a non-square matrix".into()));
        }
        let mut result = Self::identity(self.rows);
        let mut base = self.clone();
        while power > 0 {
            if power & 1 == 1 {
                result = result.matmul(&base)?;
            }
            power >>= 1;
            if power > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex;

    fn index(&self, (i, j): (usize, usize)) -> &Complex {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex {
        &mut self.data[i * self.cols + j]
    }
}

/// Hermitian inner product `<u, v> = u* v`.
pub fn dot(u: &[Complex], v: &[Complex]) -> Complex {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(v: &[Complex]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex {
        Complex::new(re, 0.0)
    }

    #[test]
    fn solve_matches_known_inverse() {
        let a = CMatrix::from_real(2, 2, |i, j| [[4.0, 7.0], [2.0, 6.0]][i][j]);
        let inv = a.inverse().unwrap();
        let expect = [[0.6, -0.7], [-0.2, 0.4]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv[(i, j)] - c(expect[i][j])).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_solve_is_rejected() {
        let a = CMatrix::from_real(2, 2, |i, j| [[1.0, 2.0], [2.0, 4.0]][i][j]);
        assert!(matches!(a.inverse(), Err(Error::Singular(_))));
    }

    #[test]
    fn pow_matches_repeated_product() {
        let a = CMatrix::from_fn(3, 3, |i, j| Complex::new(0.1 * (i + 2 * j) as f64, 0.05 * i as f64));
        let mut slow = CMatrix::identity(3);
        for _ in 0..7 {
            slow = slow.matmul(&a).unwrap();
        }
        let fast = a.pow(7).unwrap();
        assert!(fast.sub(&slow).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(CMatrix::from_vec(2, 2, vec![ONE; 3]).is_err());
    }
}
