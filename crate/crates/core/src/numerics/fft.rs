use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{is_power_of_two, Complex, CVector, ZERO};
use crate::error::{Error, Result};

/// Forward and inverse transforms of one power-of-two length.
///
/// Forward uses the `exp(-2πi k/L)` sign convention; inverse is scaled by
/// `1/L` so that `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.len).finish()
    }
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if !is_power_of_two(len) {
            return Err(Error::Size(format!("fft length {len} is not a power of two")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, buf: &mut [Complex]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    pub fn inverse(&self, buf: &mut [Complex]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let s = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Spectrum of a real signal zero-padded to the plan length.
    pub fn forward_real(&self, signal: &[f64]) -> CVector {
        let mut buf = vec![ZERO; self.len];
        for (b, s) in buf.iter_mut().zip(signal) {
            b.re = *s;
        }
        self.forward(&mut buf);
        buf
    }
}

/// DFT (or inverse DFT with `1/L` scaling) of a power-of-two length signal.
pub fn fft(signal: &[Complex], inverse: bool) -> Result<CVector> {
    let plan = FftPlan::new(signal.len())?;
    let mut buf = signal.to_vec();
    if inverse {
        plan.inverse(&mut buf);
    } else {
        plan.forward(&mut buf);
    }
    Ok(buf)
}

/// Causal (truncated linear) convolution `y[t] = Σ_{s≤t} k[s] u[t-s]` for
/// `t < u.len()`, through a zero-padded FFT of at least twice the length.
pub fn rfft_convolve(kernel: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != input.len() {
        return Err(Error::Size(format!(
            "kernel length {} vs input length {}",
            kernel.len(),
            input.len()
        )));
    }
    let l = input.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    let plan = FftPlan::new((2 * l).next_power_of_two())?;
    let kf = plan.forward_real(kernel);
    let mut uf = plan.forward_real(input);
    for (u, k) in uf.iter_mut().zip(&kf) {
        *u *= k;
    }
    plan.inverse(&mut uf);
    Ok(uf[..l].iter().map(|v| v.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(x: &[Complex], inverse: bool) -> CVector {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                let s: Complex = (0..n)
                    .map(|j| {
                        let ang = sign * 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                        x[j] * Complex::from_polar(1.0, ang)
                    })
                    .sum();
                if inverse {
                    s / n as f64
                } else {
                    s
                }
            })
            .collect()
    }

    fn re(v: &[f64]) -> CVector {
        v.iter().map(|x| Complex::new(*x, 0.0)).collect()
    }

    #[test]
    fn constant_and_impulse() {
        let out = fft(&re(&[1.0, 1.0, 1.0, 1.0]), false).unwrap();
        let expect = re(&[4.0, 0.0, 0.0, 0.0]);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-15);
        }
        let out = fft(&re(&[1.0, 0.0, 0.0, 0.0]), false).unwrap();
        for v in out {
            assert!((v - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: CVector = (0..8)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        for inverse in [false, true] {
            let fast = fft(&x, inverse).unwrap();
            let slow = direct_dft(&x, inverse);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft(&re(&[1.0, 2.0, 3.0]), false), Err(Error::Size(_))));
        assert!(fft(&[], false).is_err());
    }

    #[test]
    fn round_trip_up_to_4096() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut len = 1;
        while len <= 4096 {
            let x: CVector = (0..len)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let back = fft(&fft(&x, false).unwrap(), true).unwrap();
            let err = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "len {len}: {err}");
            len *= 2;
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 100;
        let k: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = rfft_convolve(&k, &u).unwrap();
        for t in 0..l {
            let slow: f64 = (0..=t).map(|s| k[s] * u[t - s]).sum();
            assert!((fast[t] - slow).abs() < 1e-12);
        }
    }
}
