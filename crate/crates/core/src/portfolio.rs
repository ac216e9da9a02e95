//! Global minimum-variance weights and the turnover / gross-leverage caps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CovEstimate;
use crate::linalg;

/// Relative ridge added to near-singular covariances before escalation.
pub const RIDGE_START: f64 = 1e-10;
/// Escalation stops here: a matrix needing more is not a covariance.
pub const RIDGE_MAX: f64 = 1.0;
const INVERTIBILITY_FLOOR: f64 = 1e-12;
pub const LONG_ONLY_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    LongShort,
    LongOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// Asset identifiers (panel column indices).
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
    pub side: Side,
    /// Ridge `ε·trace/n` added to the covariance, zero when none was needed.
    #[serde(default)]
    pub ridge: f64,
}

impl WeightVector {
    pub fn new(ids: Vec<usize>, weights: Vec<f64>, side: Side) -> Self {
        Self {
            ids,
            weights,
            side,
            ridge: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn gross_leverage(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Inverse Herfindahl index of the normalized absolute weights.
    pub fn n_eff(&self) -> f64 {
        let gross = self.gross_leverage();
        if gross == 0.0 {
            return 0.0;
        }
        let h: f64 = self.weights.iter().map(|w| (w.abs() / gross).powi(2)).sum();
        1.0 / h
    }

    pub fn l1_distance(&self, other: &WeightVector) -> Result<f64> {
        if self.ids != other.ids {
            return Err(Error::IdMismatch);
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub fn weight_of(&self, id: usize) -> Option<f64> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|k| self.weights[k])
    }

    pub fn variance(&self, cov: &DMatrix<f64>) -> f64 {
        let w = DVector::from_column_slice(&self.weights);
        (w.transpose() * cov * &w)[(0, 0)]
    }
}

fn check_dims(cov: &CovEstimate, ids: &[usize]) -> Result<()> {
    if cov.dim() != ids.len() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            actual: ids.len(),
        });
    }
    if ids.is_empty() {
        return Err(Error::InvalidParameter("empty portfolio".into()));
    }
    Ok(())
}

/// Adds the smallest escalating ridge `ε·(trace/n)·I` (ε = 1e-10, ×10 per
/// step, at most [`RIDGE_MAX`]) that makes the smallest eigenvalue exceed
/// `1e-12·trace/n`.
pub fn ridge_repair(c: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = c.nrows();
    let tr = c.trace();
    let scale = if tr > 0.0 { tr / n as f64 } else { 1.0 };
    let min = linalg::min_eigenvalue(c);
    if min > INVERTIBILITY_FLOOR * scale {
        return (c.clone(), 0.0);
    }
    let mut eps = RIDGE_START;
    while min + eps * scale <= INVERTIBILITY_FLOOR * scale && eps < RIDGE_MAX {
        eps *= 10.0;
    }
    let ridge = eps * scale;
    let mut out = c.clone();
    for i in 0..n {
        out[(i, i)] += ridge;
    }
    (out, ridge)
}

/// `C⁻¹1 / (1ᵀC⁻¹1)` for a positive-definite `c`.
fn gmv_solve(c: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = c.nrows();
    let ones = DVector::from_element(n, 1.0);
    let x = match c.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        None => c
            .clone()
            .lu()
            .solve(&ones)
            .ok_or(Error::NonPositiveCurvature)?,
    };
    let denom = x.sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::NonPositiveCurvature);
    }
    Ok(x.iter().map(|v| v / denom).collect())
}

/// Unconstrained (long-short) global minimum-variance weights.
pub fn gmv_long_short(cov: &CovEstimate, ids: &[usize]) -> Result<WeightVector> {
    check_dims(cov, ids)?;
    let (c, ridge) = ridge_repair(&cov.matrix);
    let w = gmv_solve(&c)?;
    Ok(WeightVector {
        ids: ids.to_vec(),
        weights: w,
        side: Side::LongShort,
        ridge,
    })
}

/// KKT residual of a budget-constrained, nonnegative GMV candidate.
///
/// With `g = Cw` and `μ` the mean of `g` over the support, returns the larger
/// of `max |g_i - μ|` on the support and `max (μ - g_i)⁺` off it.
pub fn kkt_residual(c: &DMatrix<f64>, w: &[f64]) -> f64 {
    let g = c * DVector::from_column_slice(w);
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    let mu = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
    (0..w.len())
        .map(|i| {
            if w[i] > 0.0 {
                (g[i] - mu).abs()
            } else {
                (mu - g[i]).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Long-only global minimum-variance weights by a primal active-set method.
pub fn gmv_long_only(cov: &CovEstimate, ids: &[usize]) -> Result<WeightVector> {
    check_dims(cov, ids)?;
    let n = ids.len();
    let (c, ridge) = ridge_repair(&cov.matrix);
    let scale = (c.trace() / n as f64).max(f64::MIN_POSITIVE);
    let release_tol = 1e-12 * scale;

    let mut w = vec![1.0 / n as f64; n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LONG_ONLY_MAX_ITER {
        iterations += 1;
        let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| c[(free[i], free[j])]);
        let sub_w = gmv_solve(&sub)?;
        let mut target = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            target[i] = sub_w[k];
        }

        let blocking = free
            .iter()
            .copied()
            .filter(|&i| target[i] < 0.0)
            .map(|i| (i, w[i] / (w[i] - target[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1));

        match blocking {
            None => {
                w = target;
                let g = &c * DVector::from_column_slice(&w);
                let mu = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
                let release = (0..n)
                    .filter(|i| !free.contains(i))
                    .map(|i| (i, g[i] - mu))
                    .filter(|&(_, slack)| slack < -release_tol)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match release {
                    Some((i, _)) => {
                        free.push(i);
                        free.sort_unstable();
                    }
                    None => {
                        converged = true;
                        break;
                    }
                }
            }
            Some((i, step)) => {
                let step = step.clamp(0.0, 1.0);
                for k in 0..n {
                    w[k] += step * (target[k] - w[k]);
                }
                w[i] = 0.0;
                free.retain(|&k| k != i);
            }
        }
    }

    for v in &mut w {
        *v = v.max(0.0);
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    if converged && ridge > 0.0 && linalg::min_eigenvalue(&cov.matrix) < 0.0 {
        // the repaired problem is only a starting point when the input is indefinite
        converged = pairwise_descent(&cov.matrix, &mut w, release_tol);
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            kkt_residual: kkt_residual(&c, &w),
            best: w,
        });
    }
    Ok(WeightVector {
        ids: ids.to_vec(),
        weights: w,
        side: Side::LongOnly,
        ridge,
    })
}

/// Pairwise coordinate descent on the simplex with exact line search: moves
/// mass from the support asset with the largest gradient to the asset with
/// the smallest. Handles directions of negative curvature by jumping to the
/// segment endpoint.
fn pairwise_descent(c: &DMatrix<f64>, w: &mut [f64], tol: f64) -> bool {
    let n = w.len();
    for _ in 0..LONG_ONLY_MAX_ITER {
        let g = c * DVector::from_column_slice(w);
        let up = (0..n).min_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap_or(0);
        let Some(down) = (0..n)
            .filter(|&j| w[j] > 0.0)
            .max_by(|&a, &b| g[a].total_cmp(&g[b]))
        else {
            return false;
        };
        let gap = g[down] - g[up];
        if gap <= tol || up == down {
            return true;
        }
        let curvature = c[(up, up)] + c[(down, down)] - 2.0 * c[(up, down)];
        let step = if curvature > 0.0 {
            (gap / curvature).min(w[down])
        } else {
            w[down]
        };
        w[up] += step;
        if step >= w[down] {
            w[down] = 0.0;
        } else {
            w[down] -= step;
        }
    }
    false
}

pub fn equal_weight(ids: &[usize]) -> Result<WeightVector> {
    if ids.is_empty() {
        return Err(Error::InvalidParameter("equal weights need n >= 1".into()));
    }
    let n = ids.len();
    Ok(WeightVector::new(
        ids.to_vec(),
        vec![1.0 / n as f64; n],
        Side::LongOnly,
    ))
}

fn blend(a: &WeightVector, b: &[f64], lambda: f64) -> Vec<f64> {
    a.weights
        .iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

/// Moves from `drifted` toward `target` by at most `tau` in L1.
pub fn cap_turnover(
    target: &WeightVector,
    drifted: &WeightVector,
    tau: f64,
) -> Result<WeightVector> {
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("turnover budget {tau}")));
    }
    let gap = target.l1_distance(drifted)?;
    if gap <= tau {
        return Ok(target.clone());
    }
    let lambda = tau / gap;
    Ok(WeightVector {
        ids: target.ids.clone(),
        weights: blend(target, &drifted.weights, lambda),
        side: target.side,
        ridge: target.ridge,
    })
}

/// Blends `target` toward equal weights until its gross leverage is at most `cap`.
pub fn cap_gross_leverage(target: &WeightVector, cap: f64) -> Result<WeightVector> {
    if !(cap >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gross leverage cap {cap} below 1"
        )));
    }
    if target.gross_leverage() <= cap {
        return Ok(target.clone());
    }
    let n = target.len();
    let eq = vec![1.0 / n as f64; n];
    let gross = |l: f64| blend(target, &eq, l).iter().map(|w| w.abs()).sum::<f64>();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gross(mid) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(WeightVector {
        ids: target.ids.clone(),
        weights: blend(target, &eq, lo),
        side: target.side,
        ridge: target.ridge,
    })
}
