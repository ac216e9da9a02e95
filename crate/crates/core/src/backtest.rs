//! Rebalancing backtest with price drift, linear transaction costs and
//! universe substitution.
//!
//! Rebalance `k` happens at the close of day `t_k = start + k·Δt_out`. The
//! new weights earn the returns of days `t_k+1 ..= t_k+Δt_out`, and the cost
//! `cost_rate·‖w_new − w_drifted‖₁` is deducted from the first of those days.
//! Forming the initial portfolio is not charged.

use std::io::Write;

use chrono::NaiveDate;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::panel::{sample_universe, select_universe, ReturnPanel};
use crate::portfolio::{
    cap_gross_leverage, cap_turnover, equal_weight, gmv_long_only, gmv_long_short, Side,
    WeightVector,
};
use crate::seed;

/// Trading days per year used for annualization.
pub const DAYS_PER_YEAR: f64 = 240.0;
pub const DEFAULT_COST_RATE: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    /// 1/n in every asset.
    Equal,
    /// Global minimum variance on the given covariance estimator.
    Gmv { estimator: EstimatorSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapSpec {
    /// L1 budget per rebalance relative to the drifted weights.
    Turnover {
        tau: f64,
    },
    GrossLeverage {
        cap: f64,
    },
}

/// One strategy: how weights are computed from the trailing window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub weighting: Weighting,
    pub side: Side,
    /// In-sample window length in days.
    pub dt_in: usize,
    #[serde(default)]
    pub cap: Option<CapSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub method: MethodSpec,
    /// Portfolio size.
    pub n: usize,
    /// Size of the eligible pool (top-N by capitalization).
    pub pool: usize,
    /// Rebalancing interval in days.
    pub dt_out: usize,
    /// Total number of days simulated after `start`.
    pub horizon: usize,
    pub universe_refresh: usize,
    /// In-sample length used by the universe filters; defaults to the method's `dt_in`.
    #[serde(default)]
    pub universe_dt_in: Option<usize>,
    pub cost_rate: f64,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.dt_out < 1 {
            return bad("dt_out must be at least 1");
        }
        if !(self.cost_rate >= 0.0) {
            return bad("cost_rate must be non-negative");
        }
        if self.universe_refresh == 0 || self.universe_refresh % self.dt_out != 0 {
            return bad("universe_refresh must be a positive multiple of dt_out");
        }
        if self.n == 0 || self.n > self.pool {
            return bad("need 1 <= n <= pool");
        }
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        if self.method.dt_in < 2 {
            return bad("dt_in must be at least 2");
        }
        Ok(())
    }

    fn universe_lookback(&self) -> usize {
        self.universe_dt_in.unwrap_or(self.method.dt_in)
    }
}

/// Applies one period of returns to weights: `w_i(1+r_i)/(1+wᵀr)`.
pub fn drift_weights(w: &WeightVector, r: &[f64]) -> Result<WeightVector> {
    if r.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: r.len(),
        });
    }
    let growth = 1.0 + w.weights.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    if !(growth > 0.0) {
        return Err(Error::Bankrupt);
    }
    Ok(WeightVector {
        ids: w.ids.clone(),
        weights: w
            .weights
            .iter()
            .zip(r)
            .map(|(a, b)| a * (1.0 + b) / growth)
            .collect(),
        side: w.side,
        ridge: w.ridge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub day: usize,
    pub date: NaiveDate,
    pub method: String,
    /// True for the initial formation, which is neither charged nor counted in turnover.
    pub formation: bool,
    pub turnover: f64,
    pub turnover_drift: f64,
    pub cost: f64,
    pub gross_lev: f64,
    pub n_eff: f64,
    pub substituted: usize,
    pub weights: WeightVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the volatility is zero.
    pub sr: Option<f64>,
    pub mean: f64,
    pub vol: f64,
    pub turnover: f64,
    pub turnover_drift: f64,
    pub gross_lev: f64,
    pub n_eff: f64,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub dates: Vec<NaiveDate>,
    /// Net daily returns (after costs).
    pub daily: Vec<f64>,
    pub ledger: Vec<LedgerRow>,
    pub metrics: MetricsReport,
}

impl BacktestResult {
    pub fn final_wealth(&self) -> f64 {
        self.daily.iter().fold(1.0, |w, r| w * (1.0 + r))
    }
}

/// Union-of-ids L1 distance; ids missing from one side count as weight 0.
fn l1_union(a: &WeightVector, b: &WeightVector) -> f64 {
    let mut total: f64 = a
        .ids
        .iter()
        .zip(&a.weights)
        .map(|(id, w)| (w - b.weight_of(*id).unwrap_or(0.0)).abs())
        .sum();
    total += b
        .ids
        .iter()
        .zip(&b.weights)
        .filter(|(id, _)| a.weight_of(**id).is_none())
        .map(|(_, w)| w.abs())
        .sum::<f64>();
    total
}

fn target_weights(
    panel: &ReturnPanel,
    method: &MethodSpec,
    ids: &[usize],
    t: usize,
    factor: Option<&[f64]>,
) -> Result<WeightVector> {
    let estimator = match &method.weighting {
        Weighting::Equal => return equal_weight(ids),
        Weighting::Gmv { estimator } => estimator,
    };
    let rows = t + 1 - method.dt_in..t + 1;
    let window = panel.window(rows.clone(), ids);
    let f = factor.map(|f| &f[rows]);
    let wrap = |e: Error| Error::Estimation {
        date: panel.dates()[t].to_string(),
        method: method.name.clone(),
        source: Box::new(e),
    };
    let cov = estimator.estimate(&window, f).map_err(wrap)?;
    match method.side {
        Side::LongShort => gmv_long_short(&cov, ids),
        Side::LongOnly => gmv_long_only(&cov, ids),
    }
    .map_err(wrap)
}

fn needs_factor(w: &Weighting) -> bool {
    matches!(
        w,
        Weighting::Gmv {
            estimator: EstimatorSpec::Factor { .. }
        }
    )
}

/// Runs one backtest starting with a rebalance at the close of day `start`.
pub fn run_backtest(
    panel: &ReturnPanel,
    cfg: &BacktestConfig,
    start: usize,
) -> Result<BacktestResult> {
    let factor = needs_factor(&cfg.method.weighting).then(|| panel.market_factor());
    run_backtest_with_factor(panel, cfg, start, factor.as_deref())
}

/// As [`run_backtest`] with a caller-supplied factor series (one value per panel day).
pub fn run_backtest_with_factor(
    panel: &ReturnPanel,
    cfg: &BacktestConfig,
    start: usize,
    factor: Option<&[f64]>,
) -> Result<BacktestResult> {
    cfg.validate()?;
    let lookback = cfg.method.dt_in.max(cfg.universe_lookback());
    let end = start + cfg.horizon;
    if start + 1 < lookback || end >= panel.n_days() {
        return Err(Error::WindowOutOfRange {
            start: start as i64 + 1 - lookback as i64,
            end: end as i64,
            len: panel.n_days(),
        });
    }
    if let Some(f) = factor {
        if f.len() != panel.n_days() {
            return Err(Error::DimensionMismatch {
                expected: panel.n_days(),
                actual: f.len(),
            });
        }
    }

    let snap = select_universe(panel, start, cfg.universe_lookback(), cfg.dt_out, cfg.pool)?;
    let mut ids = sample_universe(
        &snap,
        cfg.n,
        seed::child_seed(cfg.seed, seed::stream::UNIVERSE, 0),
    )?;

    let mut daily = Vec::with_capacity(cfg.horizon);
    let mut dates = Vec::with_capacity(cfg.horizon);
    let mut ledger = Vec::new();
    let mut drifted: Option<WeightVector> = None;
    let mut previous: Option<WeightVector> = None;

    let mut k = 0usize;
    loop {
        let t = start + k * cfg.dt_out;
        if t >= end {
            break;
        }
        let mut substituted = 0;
        if k > 0 && (k * cfg.dt_out) % cfg.universe_refresh == 0 {
            let snap = select_universe(panel, t, cfg.universe_lookback(), cfg.dt_out, cfg.pool)?;
            let exited: Vec<usize> = (0..ids.len())
                .filter(|&p| !snap.eligible.contains(&ids[p]))
                .collect();
            if !exited.is_empty() {
                let fresh: Vec<usize> = snap
                    .eligible
                    .iter()
                    .copied()
                    .filter(|a| !ids.contains(a))
                    .collect();
                if fresh.len() < exited.len() {
                    return Err(Error::PoolTooSmall {
                        requested: exited.len(),
                        available: fresh.len(),
                    });
                }
                let mut rng = seed::rng(seed::child_seed(
                    cfg.seed,
                    seed::stream::SUBSTITUTION,
                    k as u64,
                ));
                let picks = index::sample(&mut rng, fresh.len(), exited.len());
                for (slot, pick) in exited.iter().zip(picks) {
                    ids[*slot] = fresh[pick];
                }
                substituted = exited.len();
            }
        }

        let mut w = target_weights(panel, &cfg.method, &ids, t, factor)?;
        if let (Some(cap), Some(prev_drift)) = (cfg.method.cap, drifted.as_ref()) {
            match cap {
                CapSpec::GrossLeverage { cap } => w = cap_gross_leverage(&w, cap)?,
                CapSpec::Turnover { tau } if substituted == 0 && prev_drift.ids == w.ids => {
                    w = cap_turnover(&w, prev_drift, tau)?
                }
                CapSpec::Turnover { .. } => {}
            }
        } else if let Some(CapSpec::GrossLeverage { cap }) = cfg.method.cap {
            w = cap_gross_leverage(&w, cap)?;
        }

        let (turnover, turnover_drift) = match (&previous, &drifted) {
            (Some(p), Some(d)) => (l1_union(&w, p), l1_union(&w, d)),
            _ => (0.0, 0.0),
        };
        let formation = drifted.is_none();
        let cost = if formation {
            0.0
        } else {
            cfg.cost_rate * turnover_drift
        };
        ledger.push(LedgerRow {
            day: t,
            date: panel.dates()[t],
            method: cfg.method.name.clone(),
            formation,
            turnover,
            turnover_drift,
            cost,
            gross_lev: w.gross_leverage(),
            n_eff: w.n_eff(),
            substituted,
            weights: w.clone(),
        });

        let period_end = (t + cfg.dt_out).min(end);
        let mut held = w.clone();
        for d in t + 1..=period_end {
            let r = panel.row(d, &held.ids);
            let gross: f64 = held.weights.iter().zip(&r).map(|(a, b)| a * b).sum();
            let net = if d == t + 1 { gross - cost } else { gross };
            daily.push(net);
            dates.push(panel.dates()[d]);
            held = drift_weights(&held, &r)?;
        }
        previous = Some(w);
        drifted = Some(held);
        k += 1;
    }

    let metrics = compute_metrics(&daily, &ledger)?;
    Ok(BacktestResult {
        dates,
        daily,
        ledger,
        metrics,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Annualized return/volatility/Sharpe and per-rebalance trading metrics.
pub fn compute_metrics(daily: &[f64], ledger: &[LedgerRow]) -> Result<MetricsReport> {
    if daily.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: daily.len(),
        });
    }
    if ledger.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    let m = mean(daily);
    let constant = daily.iter().all(|r| *r == daily[0]);
    let var = if constant {
        0.0
    } else {
        daily.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / daily.len() as f64
    };
    let mean_ann = DAYS_PER_YEAR * m;
    let vol = (DAYS_PER_YEAR * var).sqrt();
    let trades: Vec<&LedgerRow> = ledger.iter().filter(|r| !r.formation).collect();
    let turnover = mean(&trades.iter().map(|r| r.turnover).collect::<Vec<_>>());
    let turnover_drift = mean(&trades.iter().map(|r| r.turnover_drift).collect::<Vec<_>>());
    Ok(MetricsReport {
        sr: (vol > 0.0).then(|| mean_ann / vol),
        mean: mean_ann,
        vol,
        turnover,
        turnover_drift,
        gross_lev: mean(&ledger.iter().map(|r| r.gross_lev).collect::<Vec<_>>()),
        n_eff: mean(&ledger.iter().map(|r| r.n_eff).collect::<Vec<_>>()),
    })
}

/// Ledger as delimited text: date, method, turnover, turnover_drift, cost, gross_lev, n_eff.
pub fn write_ledger<W: Write>(rows: &[LedgerRow], out: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    w.write_record([
        "date",
        "method",
        "turnover",
        "turnover_drift",
        "cost",
        "gross_lev",
        "n_eff",
    ])?;
    for r in rows {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.method.clone(),
            r.turnover.to_string(),
            r.turnover_drift.to_string(),
            r.cost.to_string(),
            r.gross_lev.to_string(),
            r.n_eff.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Daily net returns as delimited text: date, net_return.
pub fn write_daily<W: Write>(
    dates: &[NaiveDate],
    daily: &[f64],
    out: W,
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    w.write_record(["date", "net_return"])?;
    for (d, r) in dates.iter().zip(daily) {
        w.write_record([d.format("%Y-%m-%d").to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
