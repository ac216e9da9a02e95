//! Randomized and fixed-universe experiment protocols, bootstrap intervals
//! and the best-set flags used in the summary table.
//!
//! Each simulation draws a start day and a seed from the master seed; every
//! method then runs on that identical draw, so differences between methods
//! are paired.

mod bootstrap;
mod synth;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_ci, mark_best, quantile_sorted, Direction};
pub use synth::{synth_market, SynthMarket, SynthSpec};

use crate::backtest::{run_backtest, BacktestConfig, MethodSpec, MetricsReport, DEFAULT_COST_RATE};
use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::seed;

/// Backtest settings shared by every method of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestTemplate {
    pub dt_out: usize,
    pub horizon: usize,
    pub universe_refresh: usize,
    pub cost_rate: f64,
}

impl Default for BacktestTemplate {
    fn default() -> Self {
        Self {
            dt_out: 5,
            horizon: 240,
            universe_refresh: 240,
            cost_rate: DEFAULT_COST_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub pool: usize,
    pub n_sims: usize,
    /// Inclusive range of start days sampled uniformly.
    pub start_range: (usize, usize),
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub template: BacktestTemplate,
    pub master_seed: u64,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_n_boot() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n > self.pool {
            return Err(Error::InvalidParameter(format!(
                "n = {} exceeds pool = {}",
                self.n, self.pool
            )));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidParameter("n_sims must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods".into()));
        }
        if self.start_range.0 > self.start_range.1 {
            return Err(Error::InvalidParameter("empty start range".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(
                "method names must be unique".into(),
            ));
        }
        Ok(())
    }

    /// Lookback used by the universe filters: the longest in-sample window of any method.
    pub fn universe_dt_in(&self) -> usize {
        self.methods.iter().map(|m| m.dt_in).max().unwrap_or(0)
    }

    pub fn backtest_config(&self, method: &MethodSpec, seed_value: u64) -> BacktestConfig {
        BacktestConfig {
            method: method.clone(),
            n: self.n,
            pool: self.pool,
            dt_out: self.template.dt_out,
            horizon: self.template.horizon,
            universe_refresh: self.template.universe_refresh,
            universe_dt_in: Some(self.universe_dt_in()),
            cost_rate: self.template.cost_rate,
            seed: seed_value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Sr,
    Mean,
    Vol,
    Turnover,
    TurnoverDrift,
    GrossLev,
    NEff,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Sr,
        Metric::Mean,
        Metric::Vol,
        Metric::Turnover,
        Metric::TurnoverDrift,
        Metric::GrossLev,
        Metric::NEff,
    ];

    /// Column header in the summary table.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Sr => "SR",
            Metric::Mean => "MEAN",
            Metric::Vol => "VOL",
            Metric::Turnover => "Turnover",
            Metric::TurnoverDrift => "Turnover+drift",
            Metric::GrossLev => "GrossLev",
            Metric::NEff => "N_eff",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::Sr | Metric::Mean | Metric::NEff => Direction::HigherIsBetter,
            _ => Direction::LowerIsBetter,
        }
    }

    pub fn of(self, m: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Sr => m.sr,
            Metric::Mean => Some(m.mean),
            Metric::Vol => Some(m.vol),
            Metric::Turnover => Some(m.turnover),
            Metric::TurnoverDrift => Some(m.turnover_drift),
            Metric::GrossLev => Some(m.gross_lev),
            Metric::NEff => Some(m.n_eff),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    pub interval: (f64, f64),
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub metrics: Vec<MetricSummary>,
}

impl MethodSummary {
    pub fn get(&self, metric: Metric) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)
            .expect("every metric is summarized")
    }
}

/// One simulation's draw and the per-method results on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub index: usize,
    pub start: usize,
    pub seed: u64,
    pub metrics: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_sims: usize,
    pub used: usize,
    pub dropped: usize,
    /// First failure message per dropped draw, by simulation index.
    pub failures: Vec<(usize, String)>,
    pub methods: Vec<MethodSummary>,
    pub simulations: Vec<SimulationRecord>,
}

fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Aggregates per-simulation metrics into means, intervals and best-set flags.
///
/// The result does not depend on the order of `sims`.
pub fn summarize(
    names: &[String],
    sims: &[SimulationRecord],
    n_boot: usize,
    level: f64,
    master_seed: u64,
) -> Result<Vec<MethodSummary>> {
    if sims.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    let mut out: Vec<MethodSummary> = names
        .iter()
        .map(|n| MethodSummary {
            name: n.clone(),
            metrics: Vec::new(),
        })
        .collect();
    for (mi, metric) in Metric::ALL.iter().enumerate() {
        // same resampling stream for every method: identical samples give identical intervals
        let boot_seed = seed::child_seed(master_seed, seed::stream::BOOTSTRAP, mi as u64);
        let mut means = Vec::with_capacity(names.len());
        let mut intervals = Vec::with_capacity(names.len());
        for k in 0..names.len() {
            let values: Vec<f64> = sims
                .iter()
                .filter_map(|s| metric.of(&s.metrics[k]))
                .collect();
            if values.is_empty() {
                means.push(f64::NAN);
                intervals.push((f64::NAN, f64::NAN));
                continue;
            }
            let mean = sorted_mean(&values);
            let iv = if values.len() < 2 {
                (mean, mean)
            } else {
                bootstrap_ci(&values, level, n_boot, boot_seed)?
            };
            means.push(mean);
            intervals.push(iv);
        }
        let flags = mark_best(&means, &intervals, metric.direction());
        for k in 0..names.len() {
            out[k].metrics.push(MetricSummary {
                metric: *metric,
                mean: means[k],
                interval: intervals[k],
                flagged: flags[k],
            });
        }
    }
    Ok(out)
}

/// Start day and backtest seed of simulation `i`.
pub fn simulation_draw(cfg: &ExperimentConfig, i: usize) -> (usize, u64) {
    let s = seed::child_seed(cfg.master_seed, seed::stream::SIMULATION, i as u64);
    let mut rng = seed::rng(s);
    let start = rng.random_range(cfg.start_range.0..=cfg.start_range.1);
    (start, s)
}

/// Runs every method on `n_sims` random (start, universe) draws.
pub fn run_randomized_experiment(
    panel: &ReturnPanel,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes: Vec<std::result::Result<SimulationRecord, (usize, String)>> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|i| {
            let (start, s) = simulation_draw(cfg, i);
            let mut metrics = Vec::with_capacity(cfg.methods.len());
            for m in &cfg.methods {
                let bt = cfg.backtest_config(m, s);
                match run_backtest(panel, &bt, start) {
                    Ok(r) if r.metrics.sr.is_some() => metrics.push(r.metrics),
                    Ok(_) => return Err((i, format!("{}: zero volatility", m.name))),
                    Err(e) => return Err((i, format!("{}: {e}", m.name))),
                }
            }
            Ok(SimulationRecord {
                index: i,
                start,
                seed: s,
                metrics,
            })
        })
        .collect();
    let mut simulations = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => simulations.push(r),
            Err(f) => failures.push(f),
        }
    }
    if simulations.is_empty() {
        let detail = failures.first().map(|f| f.1.clone()).unwrap_or_default();
        return Err(Error::InvalidParameter(format!(
            "every simulation failed; first failure: {detail}"
        )));
    }
    let names: Vec<String> = cfg.methods.iter().map(|m| m.name.clone()).collect();
    let methods = summarize(&names, &simulations, cfg.n_boot, cfg.level, cfg.master_seed)?;
    Ok(ExperimentReport {
        n_sims: cfg.n_sims,
        used: simulations.len(),
        dropped: failures.len(),
        failures,
        methods,
        simulations,
    })
}

/// Runs every method once on the whole top-`pool` universe from `start`.
pub fn run_fixed_universe(
    panel: &ReturnPanel,
    cfg: &ExperimentConfig,
    start: usize,
) -> Result<Vec<(String, MetricsReport)>> {
    let fixed = ExperimentConfig {
        n: cfg.pool,
        ..cfg.clone()
    };
    fixed
        .methods
        .par_iter()
        .map(|m| {
            let r = run_backtest(panel, &fixed.backtest_config(m, cfg.master_seed), start)?;
            Ok((m.name.clone(), r.metrics))
        })
        .collect()
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Summary table: one row per method, three decimals, `*` on flagged cells.
    pub fn write_table<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(out);
        let mut header = vec!["method".to_string()];
        header.extend(Metric::ALL.iter().map(|m| m.label().to_string()));
        w.write_record(&header)?;
        for m in &self.methods {
            let mut row = vec![m.name.clone()];
            for s in &m.metrics {
                let cell = if s.mean.is_nan() {
                    "NA".to_string()
                } else {
                    format!("{:.3}", s.mean)
                };
                row.push(if s.flagged { format!("{cell}*") } else { cell });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
