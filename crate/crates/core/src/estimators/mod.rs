//! Covariance estimators.
//!
//! Every estimator returns a [`CovEstimate`]: a symmetric PSD matrix in units
//! of daily return² together with the method tag and parameters that
//! produced it.

mod average_oracle;
mod dcc;
mod factor;
mod sample;
mod shrinkage;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use average_oracle::{
    ao_apply, ao_calibrate, ao_correlation, calibration_pairs, oracle_eigenvalues, AOProfile,
    CalibrationPair,
};
pub use dcc::{dcc_fit_forecast, fit_garch, DccFit, DccForecast, GarchParams, FALLBACK_DCC};
pub use factor::{factor_residualize, FactorSplit};
pub use sample::{sample_corr, sample_cov};
pub use shrinkage::{nls_cov, nonlinear_shrink, shrink_correlation};

use crate::error::Result;

/// Which nonlinear-shrinkage label was requested. All variants share one
/// analytic implementation; the tag is kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NlsVariant {
    Nls,
    Qis,
    Quest,
}

impl NlsVariant {
    pub fn label(self) -> &'static str {
        match self {
            NlsVariant::Nls => "NLS",
            NlsVariant::Qis => "QIS",
            NlsVariant::Quest => "QuEST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub method: String,
    /// Anchor day and in-sample length, when known.
    pub window: Option<(usize, usize)>,
    pub params: BTreeMap<String, f64>,
}

impl CovEstimate {
    pub fn new(matrix: DMatrix<f64>, method: impl Into<String>) -> Self {
        Self {
            matrix,
            method: method.into(),
            window: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Checks symmetry (1e-12 relative) and the PSD floor `-1e-10·trace/n`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.dim();
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(format!("asymmetry {asym:e}"));
        }
        if n > 0 {
            let min = crate::linalg::min_eigenvalue(&self.matrix);
            let floor = -1e-10 * self.trace().abs() / n as f64;
            if min < floor {
                return Err(format!("min eigenvalue {min:e} below {floor:e}"));
            }
        }
        Ok(())
    }
}

/// Which estimator a backtest or experiment method uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Sample,
    Shrinkage {
        #[serde(default = "default_variant")]
        variant: NlsVariant,
    },
    AverageOracle {
        profile: AOProfile,
    },
    Dcc {
        /// Nonlinear shrinkage of the correlation target (otherwise the raw sample correlation).
        #[serde(default = "default_true")]
        shrink_target: bool,
    },
    /// Single-factor augmentation around another estimator applied to residuals.
    Factor {
        inner: Box<EstimatorSpec>,
    },
}

fn default_variant() -> NlsVariant {
    NlsVariant::Qis
}

fn default_true() -> bool {
    true
}

impl EstimatorSpec {
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Sample => "NotFilt".into(),
            EstimatorSpec::Shrinkage { variant } => variant.label().into(),
            EstimatorSpec::AverageOracle { .. } => "AO".into(),
            EstimatorSpec::Dcc { shrink_target } => {
                if *shrink_target {
                    "DCC-NLS".into()
                } else {
                    "DCC".into()
                }
            }
            EstimatorSpec::Factor { inner } => format!("AFM1-{}", inner.label()),
        }
    }

    /// Estimates a covariance from a day×asset window. `factor` is needed only
    /// by the factor-augmented variant.
    pub fn estimate(&self, window: &DMatrix<f64>, factor: Option<&[f64]>) -> Result<CovEstimate> {
        match self {
            EstimatorSpec::Sample => sample_cov(window),
            EstimatorSpec::Shrinkage { variant } => {
                let mut est = nls_cov(window)?;
                est.method = variant.label().into();
                Ok(est)
            }
            EstimatorSpec::AverageOracle { profile } => ao_apply(window, profile),
            EstimatorSpec::Dcc { shrink_target } => {
                let fc = if *shrink_target {
                    dcc_fit_forecast(window, &shrink_correlation)?
                } else {
                    dcc_fit_forecast(window, &|eigs: &[f64], _c: f64| Ok(eigs.to_vec()))?
                };
                Ok(fc.forecast)
            }
            EstimatorSpec::Factor { inner } => {
                let f = factor.ok_or_else(|| {
                    crate::error::Error::InvalidParameter(
                        "factor-augmented estimator needs a factor series".into(),
                    )
                })?;
                let split = factor_residualize(window, f)?;
                let resid = inner.estimate(&split.residuals, None)?;
                let mut est = split.reassemble(&resid);
                est.method = self.label();
                Ok(est)
            }
        }
    }
}
