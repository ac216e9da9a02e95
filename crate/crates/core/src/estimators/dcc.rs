//! GARCH(1,1) volatilities combined with a dynamic conditional correlation
//! recursion toward a (possibly shrunk) unconditional correlation target.
//!
//! Univariate and correlation parameters are fitted by Gaussian
//! quasi-likelihood with Nelder-Mead on a reparameterization that enforces
//! the stationarity bounds, so every exit path satisfies them.

use nalgebra::{DMatrix, DVector};

use super::CovEstimate;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{logistic, logit, nelder_mead, NelderMeadOptions};

/// Minimum number of in-sample rows for a DCC fit.
pub const MIN_DCC_ROWS: usize = 250;
/// Persistence ceiling used by the reparameterization; keeps `a + b < 1`.
const MAX_PERSISTENCE: f64 = 0.9999;
/// (α, β) used when the correlation likelihood has no interior optimum.
pub const FALLBACK_DCC: (f64, f64) = (0.01, 0.97);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GarchParams {
    fn from_theta(theta: &[f64], scale2: f64) -> Self {
        let persistence = MAX_PERSISTENCE * logistic(theta[1]);
        let alpha = persistence * logistic(theta[2]);
        Self {
            omega: theta[0].exp() * scale2,
            alpha,
            beta: persistence - alpha,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.omega > 0.0 && self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta < 1.0
    }
}

/// Conditional variance path σ²_t (t = 0..T) plus the one-step-ahead σ²_{T+1}.
fn garch_variances(eps: &[f64], p: &GarchParams, var0: f64) -> (Vec<f64>, f64) {
    let mut s2 = var0;
    let mut path = Vec::with_capacity(eps.len());
    for &e in eps {
        path.push(s2);
        s2 = p.omega + p.alpha * e * e + p.beta * s2;
    }
    (path, s2)
}

fn garch_nll(eps: &[f64], p: &GarchParams, var0: f64) -> f64 {
    let mut s2 = var0;
    let mut nll = 0.0;
    for &e in eps {
        if s2 <= 0.0 {
            return f64::INFINITY;
        }
        nll += s2.ln() + e * e / s2;
        s2 = p.omega + p.alpha * e * e + p.beta * s2;
    }
    0.5 * nll
}

/// Fits GARCH(1,1) to demeaned residuals `eps` with `σ²_0` set to their
/// sample variance. Returns parameters, the variance path and the one-step forecast.
pub fn fit_garch(eps: &[f64]) -> (GarchParams, Vec<f64>, f64) {
    let t = eps.len() as f64;
    let var = eps.iter().map(|e| e * e).sum::<f64>() / t;
    if var <= 0.0 {
        let p = GarchParams {
            omega: f64::MIN_POSITIVE,
            alpha: 0.0,
            beta: 0.0,
        };
        return (p, vec![0.0; eps.len()], 0.0);
    }
    // fit on unit-variance data, then rescale omega
    let scaled: Vec<f64> = eps.iter().map(|e| e / var.sqrt()).collect();
    let x0 = [
        (0.05_f64).ln(),
        logit(0.95 / MAX_PERSISTENCE),
        logit(0.05 / 0.95),
    ];
    let opts = NelderMeadOptions {
        max_evals: 3000,
        f_tol: 1e-6,
        initial_step: 0.5,
    };
    let best = nelder_mead(
        |th| garch_nll(&scaled, &GarchParams::from_theta(th, 1.0), 1.0),
        &x0,
        &opts,
    );
    let params = GarchParams::from_theta(&best.x, var);
    let (path, next) = garch_variances(eps, &params, var);
    (params, path, next)
}

#[derive(Debug, Clone)]
pub struct DccFit {
    pub garch: Vec<GarchParams>,
    pub alpha: f64,
    pub beta: f64,
    /// Unit-diagonal correlation target after eigenvalue shrinkage.
    pub target: DMatrix<f64>,
    /// Pseudo-correlation `Q_{T+1}` after the last observation.
    pub q_terminal: DMatrix<f64>,
    /// True when the correlation fit fell back to [`FALLBACK_DCC`].
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct DccForecast {
    pub fit: DccFit,
    pub forecast: CovEstimate,
}

fn pair_nll(s: &DMatrix<f64>, target: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    let (t, n) = s.shape();
    let w = 1.0 - alpha - beta;
    let mut nll = 0.0;
    for i in 0..n.saturating_sub(1) {
        let j = i + 1;
        let (t11, t22, t12) = (target[(i, i)], target[(j, j)], target[(i, j)]);
        let (mut q11, mut q22, mut q12) = (t11, t22, t12);
        for k in 0..t {
            let (a, b) = (s[(k, i)], s[(k, j)]);
            let rho = q12 / (q11 * q22).sqrt();
            let one_minus = 1.0 - rho * rho;
            if !(one_minus > 0.0) {
                return f64::INFINITY;
            }
            nll += one_minus.ln() + (a * a + b * b - 2.0 * rho * a * b) / one_minus;
            q11 = w * t11 + alpha * a * a + beta * q11;
            q22 = w * t22 + alpha * b * b + beta * q22;
            q12 = w * t12 + alpha * a * b + beta * q12;
        }
    }
    0.5 * nll
}

fn normalize_to_corr(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| q[(i, i)].max(f64::MIN_POSITIVE).sqrt())
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            q[(i, j)] / (d[i] * d[j])
        }
    })
}

/// Fits the DCC model to `window` and forecasts the next day's covariance.
///
/// `target_shrink` maps the descending eigenvalues of the devolatilized
/// sample correlation (and the concentration `n/T`) to filtered eigenvalues.
pub fn dcc_fit_forecast<F>(window: &DMatrix<f64>, target_shrink: &F) -> Result<DccForecast>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>> + ?Sized,
{
    let (t, n) = window.shape();
    if t < MIN_DCC_ROWS {
        return Err(Error::InsufficientData {
            required: MIN_DCC_ROWS,
            actual: t,
        });
    }
    let (means, _) = linalg::column_moments(window);

    let mut garch = Vec::with_capacity(n);
    let mut s = DMatrix::zeros(t, n);
    let mut next_sd = Vec::with_capacity(n);
    for j in 0..n {
        let eps: Vec<f64> = window.column(j).iter().map(|r| r - means[j]).collect();
        if eps.iter().all(|e| *e == 0.0) {
            return Err(Error::InvalidParameter(format!("column {j} is constant")));
        }
        let (p, path, next) = fit_garch(&eps);
        for k in 0..t {
            s[(k, j)] = eps[k] / path[k].sqrt();
        }
        garch.push(p);
        next_sd.push(next.sqrt());
    }

    let s_cov = s.transpose() * &s / t as f64;
    let (s_corr, _) = linalg::cov_to_corr(&s_cov);
    let eig = linalg::sym_eigen(&s_corr);
    let eigs: Vec<f64> = eig.values.iter().copied().collect();
    let shrunk = target_shrink(&eigs, n as f64 / t as f64)?;
    let target = normalize_to_corr(&linalg::reassemble(&eig.vectors, &shrunk));
    let min_eig = linalg::min_eigenvalue(&target);
    if !(min_eig > 1e-10) {
        return Err(Error::SingularTarget);
    }

    let (alpha, beta, fallback) = if n < 2 {
        (0.0, 0.0, false)
    } else {
        let x0 = [logit(0.98 / MAX_PERSISTENCE), logit(0.01 / 0.98)];
        let opts = NelderMeadOptions {
            max_evals: 1500,
            f_tol: 1e-6,
            initial_step: 0.5,
        };
        let decode = |th: &[f64]| {
            let p = MAX_PERSISTENCE * logistic(th[0]);
            let a = p * logistic(th[1]);
            (a, p - a)
        };
        let best = nelder_mead(
            |th| {
                let (a, b) = decode(th);
                pair_nll(&s, &target, a, b)
            },
            &x0,
            &opts,
        );
        let (a, b) = decode(&best.x);
        if best.converged && best.value.is_finite() && a + b < 1.0 {
            (a, b, false)
        } else {
            (FALLBACK_DCC.0, FALLBACK_DCC.1, true)
        }
    };

    let w = 1.0 - alpha - beta;
    let mut q = target.clone();
    for k in 0..t {
        let sk = DVector::from_iterator(n, s.row(k).iter().copied());
        q = &target * w + &q * beta;
        q.ger(alpha, &sk, &sk, 1.0);
    }
    let r_next = normalize_to_corr(&q);
    let h = linalg::corr_to_cov(&r_next, &next_sd);

    let forecast = CovEstimate::new(linalg::symmetrize(&h), "DCC")
        .with_param("alpha", alpha)
        .with_param("beta", beta)
        .with_param("fallback", if fallback { 1.0 } else { 0.0 })
        .with_param("t", t as f64);
    Ok(DccForecast {
        fit: DccFit {
            garch,
            alpha,
            beta,
            target,
            q_terminal: q,
            fallback,
        },
        forecast,
    })
}
