use nalgebra::DMatrix;

use super::CovEstimate;
use crate::error::{Error, Result};
use crate::linalg;

/// Sample covariance with the `1/T` normalization.
pub fn sample_cov(window: &DMatrix<f64>) -> Result<CovEstimate> {
    let t = window.nrows();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    let (means, _) = linalg::column_moments(window);
    let mut centered = window.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let c = centered.transpose() * &centered / t as f64;
    Ok(CovEstimate::new(linalg::symmetrize(&c), "NotFilt").with_param("t", t as f64))
}

/// Sample correlation and per-asset population standard deviations.
pub fn sample_corr(window: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let c = sample_cov(window)?;
    Ok(linalg::cov_to_corr(&c.matrix))
}
