//! Analytic nonlinear shrinkage of sample eigenvalues.
//!
//! The population spectrum is approached through an Epanechnikov kernel
//! density estimate of the sample spectrum with locally adaptive bandwidth
//! `h_j = λ_j·T^(-1/3)` and its Hilbert transform; both have closed forms for
//! this kernel.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{sample_cov, CovEstimate};
use crate::error::{Error, Result};
use crate::linalg;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Shrinks descending sample eigenvalues at concentration `c = n/T`.
///
/// The output is aligned with the input and rescaled so its sum matches the
/// input sum.
pub fn nonlinear_shrink(eigs: &[f64], c: f64) -> Result<Vec<f64>> {
    let n = eigs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "concentration {c} outside (0, 1): the estimator needs T > n"
        )));
    }
    if let Some(bad) = eigs.iter().find(|&&l| l < -1e-10 || !l.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "negative eigenvalue {bad}"
        )));
    }
    let lambda: Vec<f64> = eigs.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = lambda.iter().sum();
    if total <= 0.0 {
        return Ok(lambda);
    }
    let t = n as f64 / c;
    let h = t.powf(-1.0 / 3.0);
    let floor = 1e-12 * total / n as f64;

    let mut shrunk = Vec::with_capacity(n);
    for &li in &lambda {
        let mut density = 0.0;
        let mut hilbert = 0.0;
        for &lj in &lambda {
            let bw = h * lj.max(floor);
            let x = (li - lj) / bw;
            let x2 = x * x;
            density += (3.0 / (4.0 * SQRT5)) * (1.0 - x2 / 5.0).max(0.0) / bw;
            let ht = if (x.abs() - SQRT5).abs() < 1e-12 {
                -0.3 / PI * x
            } else {
                -0.3 / PI * x
                    + (3.0 / (4.0 * SQRT5 * PI))
                        * (1.0 - x2 / 5.0)
                        * ((SQRT5 - x) / (SQRT5 + x)).abs().ln()
            };
            hilbert += ht / bw;
        }
        density /= n as f64;
        hilbert /= n as f64;
        let a = PI * c * li * density;
        let b = 1.0 - c - PI * c * li * hilbert;
        let denom = a * a + b * b;
        shrunk.push(if denom > 0.0 { li / denom } else { li });
    }

    let out_total: f64 = shrunk.iter().sum();
    if out_total > 0.0 {
        let scale = total / out_total;
        for v in &mut shrunk {
            *v *= scale;
        }
    }
    Ok(shrunk)
}

/// Nonlinear shrinkage of the sample covariance of `window`.
pub fn nls_cov(window: &DMatrix<f64>) -> Result<CovEstimate> {
    let (t, n) = window.shape();
    let sample = sample_cov(window)?;
    let c = n as f64 / t as f64;
    let eig = linalg::sym_eigen(&sample.matrix);
    let eigs: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let shrunk = nonlinear_shrink(&eigs, c)?;
    let m = linalg::reassemble(&eig.vectors, &shrunk);
    Ok(CovEstimate::new(m, "NLS")
        .with_param("t", t as f64)
        .with_param("c", c))
}

/// Eigenvalue map suitable as a DCC correlation-target shrinker.
pub fn shrink_correlation(eigs: &[f64], c: f64) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = eigs.iter().map(|v| v.max(0.0)).collect();
    nonlinear_shrink(&clamped, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_spectrum_stays_flat_as_noise_vanishes() {
        let eigs = vec![1.0; 20];
        let out = nonlinear_shrink(&eigs, 1e-6).unwrap();
        for v in out {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn trace_is_preserved() {
        let eigs = vec![5.0, 2.5, 1.3, 1.0, 0.7, 0.4, 0.2, 0.05];
        let out = nonlinear_shrink(&eigs, 0.4).unwrap();
        let a: f64 = eigs.iter().sum();
        let b: f64 = out.iter().sum();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn shrinks_toward_the_bulk() {
        let eigs = vec![3.0, 2.0, 1.5, 1.0, 0.6, 0.3];
        let out = nonlinear_shrink(&eigs, 0.5).unwrap();
        assert!(out[0] < eigs[0]);
        assert!(out[5] > eigs[5]);
    }

    #[test]
    fn rejects_concentration_at_or_above_one() {
        assert!(nonlinear_shrink(&[1.0, 2.0], 1.0).is_err());
        assert!(nonlinear_shrink(&[1.0, 2.0], 1.5).is_err());
    }

    #[test]
    fn rejects_negative_eigenvalue() {
        assert!(nonlinear_shrink(&[1.0, -1e-6], 0.5).is_err());
        assert!(nonlinear_shrink(&[1.0, -1e-12], 0.5).is_ok());
    }

    #[test]
    fn beats_sample_covariance_on_identity_truth() {
        let (n, t) = (100, 300);
        let mut wins = 0;
        let trials = 20;
        for s in 0..trials {
            let mut rng = crate::seed::rng(1000 + s);
            let x = DMatrix::from_fn(t, n, |_, _| crate::seed::normal(&mut rng));
            let sample = sample_cov(&x).unwrap().matrix;
            let shrunk = nls_cov(&x).unwrap();
            let id = DMatrix::identity(n, n);
            if linalg::frobenius_distance(&shrunk.matrix, &id)
                < linalg::frobenius_distance(&sample, &id)
            {
                wins += 1;
            }
            assert!((shrunk.trace() - sample.trace()).abs() < 1e-9 * sample.trace());
            shrunk.check_invariants().unwrap();
        }
        assert_eq!(wins, trials);
    }
}
