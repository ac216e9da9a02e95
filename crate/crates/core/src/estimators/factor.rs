use nalgebra::{DMatrix, DVector};

use super::CovEstimate;
use crate::error::{Error, Result};
use crate::linalg;

/// Single-factor decomposition of a return window.
#[derive(Debug, Clone)]
pub struct FactorSplit {
    pub betas: Vec<f64>,
    /// `returns - beta·factor`, same shape as the input window.
    pub residuals: DMatrix<f64>,
    /// Population variance of the factor over the window.
    pub factor_variance: f64,
}

impl FactorSplit {
    /// `β βᵀ·Var(f) + C_resid`.
    pub fn reassemble(&self, resid: &CovEstimate) -> CovEstimate {
        let b = DVector::from_column_slice(&self.betas);
        let systematic = &b * b.transpose() * self.factor_variance;
        let mut out = resid.clone();
        out.matrix = linalg::symmetrize(&(systematic + &resid.matrix));
        out.params
            .insert("factor_variance".into(), self.factor_variance);
        out
    }
}

/// Per-asset OLS betas against `factor` and the corresponding residuals.
pub fn factor_residualize(window: &DMatrix<f64>, factor: &[f64]) -> Result<FactorSplit> {
    let t = window.nrows();
    if factor.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: factor.len(),
        });
    }
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    let f_mean = factor.iter().sum::<f64>() / t as f64;
    let f_centered: Vec<f64> = factor.iter().map(|f| f - f_mean).collect();
    let ss: f64 = f_centered.iter().map(|f| f * f).sum();
    let raw: f64 = factor.iter().map(|f| f * f).sum();
    if ss <= 1e-24 * raw {
        return Err(Error::InvalidParameter("factor has zero variance".into()));
    }
    let betas: Vec<f64> = window
        .column_iter()
        .map(|col| col.iter().zip(&f_centered).map(|(r, f)| r * f).sum::<f64>() / ss)
        .collect();
    let residuals = DMatrix::from_fn(t, window.ncols(), |i, j| {
        window[(i, j)] - betas[j] * factor[i]
    });
    Ok(FactorSplit {
        betas,
        residuals,
        factor_variance: ss / t as f64,
    })
}
