//! Synthetic Gaussian factor markets with regime switching.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{business_days, ReturnPanel};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_factors: usize,
    /// Daily volatility of each factor.
    pub factor_vol: f64,
    pub loading_mean: f64,
    pub loading_sd: f64,
    /// Median daily idiosyncratic volatility.
    pub idio_vol: f64,
    /// Log-normal dispersion of idiosyncratic volatility across assets.
    pub idio_dispersion: f64,
    /// Constant daily expected return of every asset.
    pub drift: f64,
    /// Number of covariance states; loadings are redrawn per state.
    pub n_states: usize,
    /// Days between possible regime switches.
    pub regime_length: usize,
    /// Probability of keeping the current state at a switch point.
    pub persistence: f64,
    /// Dispersion of log initial capitalizations.
    pub cap_sigma: f64,
    pub start_date: NaiveDate,
    /// Explicit per-state covariances, overriding the factor model.
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_factors: 3,
            factor_vol: 0.01,
            loading_mean: 1.0,
            loading_sd: 0.5,
            idio_vol: 0.015,
            idio_dispersion: 0.5,
            drift: 0.0003,
            n_states: 1,
            regime_length: 0,
            persistence: 0.0,
            cap_sigma: 1.0,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
            covariances: None,
        }
    }
}

/// A generated panel with the true covariance path behind it.
#[derive(Debug, Clone)]
pub struct SynthMarket {
    pub panel: ReturnPanel,
    /// True covariance of each state.
    pub states: Vec<DMatrix<f64>>,
    /// State index of each day.
    pub schedule: Vec<usize>,
}

impl SynthMarket {
    pub fn true_cov(&self, day: usize) -> &DMatrix<f64> {
        &self.states[self.schedule[day]]
    }
}

fn psd_root(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::sym_eigen(c);
    let scale = c.trace().abs().max(f64::MIN_POSITIVE) / c.nrows() as f64;
    let min = eig.values.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let root = DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|v| v.max(0.0).sqrt()),
    );
    Ok(&eig.vectors * DMatrix::from_diagonal(&root))
}

fn state_covariances<R: Rng>(spec: &SynthSpec, n: usize, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    if let Some(explicit) = &spec.covariances {
        if explicit.is_empty() {
            return Err(Error::InvalidParameter("empty covariance list".into()));
        }
        return explicit
            .iter()
            .map(|rows| {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: rows.len(),
                    });
                }
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidParameter(
                        "covariance is not symmetric".into(),
                    ));
                }
                Ok(m)
            })
            .collect();
    }
    let k = spec.n_factors;
    let idio: Vec<f64> = (0..n)
        .map(|_| spec.idio_vol * (spec.idio_dispersion * seed::normal(rng)).exp())
        .collect();
    Ok((0..spec.n_states.max(1))
        .map(|_| {
            let b = DMatrix::from_fn(n, k, |_, _| {
                spec.loading_mean + spec.loading_sd * seed::normal(rng)
            });
            let mut c = &b * b.transpose() * (spec.factor_vol * spec.factor_vol);
            for i in 0..n {
                c[(i, i)] += idio[i] * idio[i];
            }
            c
        })
        .collect())
}

/// Generates `days` of returns for `n_assets` assets.
pub fn synth_market(
    spec: &SynthSpec,
    days: usize,
    n_assets: usize,
    seed_value: u64,
) -> Result<SynthMarket> {
    if days == 0 || n_assets == 0 {
        return Err(Error::InvalidParameter(
            "days and n_assets must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.persistence) {
        return Err(Error::InvalidParameter(
            "persistence must lie in [0, 1]".into(),
        ));
    }
    if spec.idio_vol < 0.0 || spec.factor_vol < 0.0 || spec.idio_dispersion < 0.0 {
        return Err(Error::InvalidParameter(
            "volatilities must be non-negative".into(),
        ));
    }
    let mut rng = seed::rng(seed::child_seed(seed_value, seed::stream::MARKET, 0));
    let states = state_covariances(spec, n_assets, &mut rng)?;
    let roots = states.iter().map(psd_root).collect::<Result<Vec<_>>>()?;
    let s_count = states.len();

    let mut schedule = Vec::with_capacity(days);
    let mut state = 0usize;
    for d in 0..days {
        if d > 0 && spec.regime_length > 0 && d % spec.regime_length == 0 && s_count > 1 {
            if rng.random::<f64>() >= spec.persistence {
                state = (state + 1 + rng.random_range(0..s_count - 1)) % s_count;
            }
        }
        schedule.push(state);
    }

    let mut returns = DMatrix::zeros(days, n_assets);
    let mut caps = DMatrix::zeros(days, n_assets);
    let mut level: Vec<f64> = (0..n_assets)
        .map(|_| (spec.cap_sigma * seed::normal(&mut rng)).exp())
        .collect();
    for d in 0..days {
        let z = DVector::from_fn(n_assets, |_, _| seed::normal(&mut rng));
        let r = &roots[schedule[d]] * z;
        for a in 0..n_assets {
            // keep simple returns above -1
            let v = (spec.drift + r[a]).max(-0.99);
            returns[(d, a)] = v;
            level[a] *= 1.0 + v;
            caps[(d, a)] = level[a];
        }
    }

    let dates = business_days(spec.start_date, days);
    let ids = (0..n_assets).map(|a| format!("A{a:04}")).collect();
    let panel = ReturnPanel::new(dates, ids, returns, Some(caps))?;
    Ok(SynthMarket {
        panel,
        states,
        schedule,
    })
}
