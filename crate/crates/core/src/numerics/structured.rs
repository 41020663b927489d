use super::{Complex, CVector, ZERO};
use crate::error::{Error, Result};

/// `out[l] = Σ_n weights[n] · base[n]^l` for `l < length`.
pub fn vandermonde_dot(base: &[Complex], weights: &[Complex], length: usize) -> Result<CVector> {
    if base.len() != weights.len() {
        return Err(Error::Size(format!(
            "vandermonde base has {} nodes but {} weights",
            base.len(),
            weights.len()
        )));
    }
    let mut out = vec![ZERO; length];
    for (z, w) in base.iter().zip(weights) {
        let mut term = *w;
        for o in out.iter_mut() {
            *o += term;
            term *= z;
        }
    }
    Ok(out)
}

/// `Σ_j numerators[j] / (node - poles[j])`.
pub fn cauchy_dot(numerators: &[Complex], poles: &[Complex], node: Complex) -> Result<Complex> {
    if numerators.len() != poles.len() {
        return Err(Error::Size(format!(
            "cauchy sum with {} numerators and {} poles",
            numerators.len(),
            poles.len()
        )));
    }
    let mut acc = ZERO;
    for (v, p) in numerators.iter().zip(poles) {
        let d = node - p;
        if d.norm() <= f64::EPSILON * node.norm().max(p.norm()).max(1.0) {
            return Err(Error::Singular(format!("node {node} coincides with pole {p}")));
        }
        acc += v / d;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> CVector {
        (0..n)
            .map(|_| c(rng.random_range(-radius..radius), rng.random_range(-radius..radius)))
            .collect()
    }

    #[test]
    fn vandermonde_examples() {
        let out = vandermonde_dot(&[c(0.5, 0.0)], &[c(1.0, 0.0)], 4).unwrap();
        for (o, e) in out.iter().zip([1.0, 0.5, 0.25, 0.125]) {
            assert!((o - c(e, 0.0)).norm() < 1e-15);
        }
        let out = vandermonde_dot(&[c(1.0, 0.0); 2], &[c(0.5, 0.0); 2], 3).unwrap();
        for o in out {
            assert!((o - c(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(vandermonde_dot(&[c(1.0, 0.0)], &[], 3).is_err());
    }

    #[test]
    fn vandermonde_matches_powi_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base: CVector = random_vec(&mut rng, 8, 0.7);
        let w = random_vec(&mut rng, 8, 1.0);
        let fast = vandermonde_dot(&base, &w, 32).unwrap();
        for (l, f) in fast.iter().enumerate() {
            let slow: Complex = (0..8).map(|n| w[n] * base[n].powi(l as i32)).sum();
            assert!((f - slow).norm() < 1e-12);
        }
    }

    #[test]
    fn cauchy_examples() {
        let v = cauchy_dot(&[c(1.0, 0.0)], &[c(0.0, 0.0)], c(2.0, 0.0)).unwrap();
        assert!((v - c(0.5, 0.0)).norm() < 1e-15);
        let v = cauchy_dot(&[c(1.0, 0.0); 2], &[c(1.0, 0.0), c(-1.0, 0.0)], c(0.0, 0.0)).unwrap();
        assert!(v.norm() < 1e-15);
        assert!(matches!(
            cauchy_dot(&[c(1.0, 0.0)], &[c(0.3, 0.1)], c(0.3, 0.1)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn cauchy_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_vec(&mut rng, 16, 1.0);
        let p = random_vec(&mut rng, 16, 1.0);
        let z = c(3.0, 0.5);
        let fast = cauchy_dot(&v, &p, z).unwrap();
        let slow: Complex = v.iter().zip(&p).map(|(a, b)| a * (z - b).inv()).sum();
        assert!((fast - slow).norm() < 1e-12);
    }
}
