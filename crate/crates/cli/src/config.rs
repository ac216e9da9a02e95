//! Run configuration files.
//!
//! Configs are TOML. Relative paths inside a config are resolved against the
//! config file's directory, and the fully resolved config (every default
//! filled in) is what ends up in the run manifest, so a manifest can be fed
//! back as a config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use aofilter::backtest::{BacktestConfig, CapSpec, MethodSpec, Weighting, DEFAULT_COST_RATE};
use aofilter::estimators::{AOProfile, EstimatorSpec, NlsVariant};
use aofilter::experiments::{synth_market, BacktestTemplate, ExperimentConfig, SynthSpec};
use aofilter::panel::{load_panel, LoadOptions, ReturnPanel};
use aofilter::portfolio::Side;

/// Reads a config from TOML, or from the `config` field of a run manifest
/// when the file ends in `.json`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        let config = manifest
            .get("config")
            .cloned()
            .with_context(|| format!("manifest {} has no `config` field", path.display()))?;
        serde_json::from_value(config)
            .with_context(|| format!("invalid config in manifest {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PanelConfig {
    File {
        returns: PathBuf,
        #[serde(default)]
        caps: Option<PathBuf>,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default = "default_missing")]
        missing: String,
    },
    Synthetic {
        days: usize,
        n_assets: usize,
        seed: u64,
        #[serde(default)]
        spec: SynthSpec,
    },
}

fn default_delimiter() -> char {
    ','
}

fn default_missing() -> String {
    "NA".into()
}

impl PanelConfig {
    pub fn resolve(&mut self, base: &Path) {
        if let PanelConfig::File { returns, caps, .. } = self {
            resolve(base, returns);
            if let Some(c) = caps {
                resolve(base, c);
            }
        }
    }

    pub fn load(&self) -> Result<ReturnPanel> {
        match self {
            PanelConfig::File {
                returns,
                caps,
                delimiter,
                missing,
            } => {
                if !delimiter.is_ascii() {
                    bail!("panel.delimiter must be a single ASCII character");
                }
                let opts = LoadOptions {
                    delimiter: *delimiter as u8,
                    missing_token: missing.clone(),
                };
                load_panel(returns, caps.as_deref(), &opts)
                    .with_context(|| format!("loading panel {}", returns.display()))
            }
            PanelConfig::Synthetic {
                days,
                n_assets,
                seed,
                spec,
            } => Ok(synth_market(spec, *days, *n_assets, *seed)?.panel),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    Sample,
    Shrinkage {
        #[serde(default = "default_variant")]
        variant: NlsVariant,
    },
    AverageOracle {
        /// Profile file written by `calibrate-ao`.
        profile: PathBuf,
    },
    Dcc {
        #[serde(default = "default_true")]
        shrink_target: bool,
    },
    Factor {
        inner: Box<EstimatorConfig>,
    },
}

fn default_variant() -> NlsVariant {
    NlsVariant::Nls
}

fn default_true() -> bool {
    true
}

impl EstimatorConfig {
    fn resolve(&mut self, base: &Path) {
        match self {
            EstimatorConfig::AverageOracle { profile } => resolve(base, profile),
            EstimatorConfig::Factor { inner } => inner.resolve(base),
            _ => {}
        }
    }

    fn build(&self) -> Result<EstimatorSpec> {
        Ok(match self {
            EstimatorConfig::Sample => EstimatorSpec::Sample,
            EstimatorConfig::Shrinkage { variant } => {
                EstimatorSpec::Shrinkage { variant: *variant }
            }
            EstimatorConfig::AverageOracle { profile } => {
                let text = std::fs::read_to_string(profile)
                    .with_context(|| format!("reading AO profile {}", profile.display()))?;
                EstimatorSpec::AverageOracle {
                    profile: AOProfile::from_json(&text)
                        .with_context(|| format!("parsing AO profile {}", profile.display()))?,
                }
            }
            EstimatorConfig::Dcc { shrink_target } => EstimatorSpec::Dcc {
                shrink_target: *shrink_target,
            },
            EstimatorConfig::Factor { inner } => EstimatorSpec::Factor {
                inner: Box::new(inner.build()?),
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingConfig {
    Equal,
    Gmv { estimator: EstimatorConfig },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub weighting: WeightingConfig,
    #[serde(default = "default_side")]
    pub side: Side,
    pub dt_in: usize,
    #[serde(default)]
    pub cap: Option<CapSpec>,
}

fn default_side() -> Side {
    Side::LongShort
}

impl MethodConfig {
    fn resolve(&mut self, base: &Path) {
        if let WeightingConfig::Gmv { estimator } = &mut self.weighting {
            estimator.resolve(base);
        }
    }

    pub fn build(&self) -> Result<MethodSpec> {
        let weighting = match &self.weighting {
            WeightingConfig::Equal => Weighting::Equal,
            WeightingConfig::Gmv { estimator } => Weighting::Gmv {
                estimator: estimator
                    .build()
                    .with_context(|| format!("method {}", self.name))?,
            },
        };
        Ok(MethodSpec {
            name: self.name.clone(),
            weighting,
            side: self.side,
            dt_in: self.dt_in,
            cap: self.cap,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub seed: u64,
    pub n: usize,
    pub dt_in: usize,
    pub dt_out: usize,
    pub n_pairs: usize,
    pub panel: PanelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestRunConfig {
    pub seed: u64,
    /// Day index of the first rebalance.
    #[serde(default)]
    pub start: Option<usize>,
    /// Alternative to `start`: date of the first rebalance (YYYY-MM-DD).
    #[serde(default)]
    pub start_date: Option<String>,
    pub n: usize,
    pub pool: usize,
    #[serde(default = "default_dt_out")]
    pub dt_out: usize,
    #[serde(default = "default_year")]
    pub horizon: usize,
    #[serde(default = "default_year")]
    pub universe_refresh: usize,
    #[serde(default = "default_cost")]
    pub cost_rate: f64,
    pub method: MethodConfig,
    pub panel: PanelConfig,
}

fn default_dt_out() -> usize {
    5
}

fn default_year() -> usize {
    240
}

fn default_cost() -> f64 {
    DEFAULT_COST_RATE
}

impl BacktestRunConfig {
    pub fn resolve(&mut self, base: &Path) {
        self.method.resolve(base);
        self.panel.resolve(base);
    }

    pub fn start_day(&self, panel: &ReturnPanel) -> Result<usize> {
        match (self.start, &self.start_date) {
            (Some(s), None) => Ok(s),
            (None, Some(d)) => {
                let date = d
                    .parse()
                    .with_context(|| format!("start_date `{d}` is not YYYY-MM-DD"))?;
                panel
                    .index_of_date(date)
                    .with_context(|| format!("start_date {d} is not a panel date"))
            }
            (None, None) => bail!("missing field `start` (or `start_date`)"),
            (Some(_), Some(_)) => bail!("give only one of `start` and `start_date`"),
        }
    }

    pub fn build(&self) -> Result<BacktestConfig> {
        Ok(BacktestConfig {
            method: self.method.build()?,
            n: self.n,
            pool: self.pool,
            dt_out: self.dt_out,
            horizon: self.horizon,
            universe_refresh: self.universe_refresh,
            universe_dt_in: None,
            cost_rate: self.cost_rate,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRunConfig {
    pub seed: u64,
    pub n: usize,
    pub pool: usize,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
    pub start_range: (usize, usize),
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub template: BacktestTemplate,
    pub methods: Vec<MethodConfig>,
    pub panel: PanelConfig,
}

fn default_sims() -> usize {
    200
}

fn default_n_boot() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

impl ExperimentRunConfig {
    pub fn resolve(&mut self, base: &Path) {
        for m in &mut self.methods {
            m.resolve(base);
        }
        self.panel.resolve(base);
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            n: self.n,
            pool: self.pool,
            n_sims: self.n_sims,
            start_range: self.start_range,
            methods: self
                .methods
                .iter()
                .map(MethodConfig::build)
                .collect::<Result<_>>()?,
            template: self.template.clone(),
            master_seed: self.seed,
            n_boot: self.n_boot,
            level: self.level,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub scale: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            scale: 10.0,
            decay: 4.0,
            floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub angles: Vec<f64>,
    #[serde(default)]
    pub t: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynmodelConfig {
    pub seed: u64,
    #[serde(default = "default_dyn_n")]
    pub n: usize,
    #[serde(default = "default_dyn_t")]
    pub t: usize,
    #[serde(default = "default_states")]
    pub states: usize,
    #[serde(default = "default_slices")]
    pub n_slices: usize,
    #[serde(default = "default_angle")]
    pub angle: f64,
    /// Rotation planes (p, p+stride); `planes` of them, stride = `planes`.
    #[serde(default = "default_planes")]
    pub planes: usize,
    /// Probability of staying in the current state at a slice boundary.
    #[serde(default)]
    pub stay_prob: f64,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    /// Per-state eigenvalues, overriding `spectrum`.
    #[serde(default)]
    pub eigenvalues: Option<Vec<Vec<f64>>>,
    /// Slices for the independence check (0 skips it).
    #[serde(default = "default_independence")]
    pub independence_slices: usize,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_dyn_n() -> usize {
    50
}

fn default_dyn_t() -> usize {
    200
}

fn default_states() -> usize {
    2
}

fn default_slices() -> usize {
    200
}

fn default_angle() -> f64 {
    std::f64::consts::PI / 8.0
}

fn default_planes() -> usize {
    10
}

fn default_independence() -> usize {
    1000
}
