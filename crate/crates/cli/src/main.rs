mod config;
mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use aofilter::backtest::{run_backtest, write_daily, write_ledger, MetricsReport};
use aofilter::dynmodel::{
    build_cyclic_world, exponential_spectrum, frobenius_compare, independence_check,
    write_slice_losses, write_sweep, RegimeWorld, RotationSpec, SweepRow,
};
use aofilter::estimators::ao_calibrate;
use aofilter::experiments::run_randomized_experiment;
use aofilter::panel::write_table;

use config::{
    read_config, BacktestRunConfig, CalibrateConfig, DynmodelConfig, ExperimentRunConfig,
    PanelConfig,
};
use manifest::Recorder;

#[derive(Parser)]
#[command(
    name = "aofilter",
    version,
    about = "Covariance filtering and minimum-variance backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate an Average Oracle eigenvalue profile.
    CalibrateAo(Common),
    /// Run one backtest and write metrics, ledger and daily returns.
    Backtest(Common),
    /// Run the randomized multi-method experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of simulations.
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Regime-switching model: AO vs NLS-oracle losses and parameter sweep.
    Dynmodel(Common),
    /// Write the panel named by a config's `[panel]` table as CSV files.
    Panel(Common),
}

fn config_dir(path: &Path) -> Result<PathBuf> {
    let abs = std::fs::canonicalize(path)
        .with_context(|| format!("config {} not found", path.display()))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn setup_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn calibrate(c: &Common) -> Result<PathBuf> {
    let mut cfg: CalibrateConfig = read_config(&c.config)?;
    cfg.panel.resolve(&config_dir(&c.config)?);
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let panel = cfg.panel.load()?;
    let mut profile = ao_calibrate(&panel, cfg.n, cfg.dt_in, cfg.dt_out, cfg.n_pairs, cfg.seed)?;
    if let PanelConfig::File { returns, .. } = &cfg.panel {
        profile.panel_id = Some(returns.display().to_string());
    }
    let mut rec = Recorder::new(&c.out)?;
    rec.write("profile.json", (profile.to_json()? + "\n").as_bytes())?;
    rec.finish("calibrate-ao", &cfg, cfg.seed)
}

#[derive(Serialize)]
struct BacktestSummary {
    method: String,
    start: usize,
    start_date: String,
    days: usize,
    rebalances: usize,
    final_wealth: f64,
    metrics: MetricsReport,
}

fn backtest(c: &Common) -> Result<PathBuf> {
    let mut cfg: BacktestRunConfig = read_config(&c.config)?;
    cfg.resolve(&config_dir(&c.config)?);
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let panel = cfg.panel.load()?;
    let start = cfg.start_day(&panel)?;
    let bt = cfg.build()?;
    let result = run_backtest(&panel, &bt, start)?;

    let mut rec = Recorder::new(&c.out)?;
    let summary = BacktestSummary {
        method: bt.method.name.clone(),
        start,
        start_date: panel.dates()[start].to_string(),
        days: result.daily.len(),
        rebalances: result.ledger.len(),
        final_wealth: result.final_wealth(),
        metrics: result.metrics.clone(),
    };
    rec.write_json("metrics.json", &summary)?;
    let mut buf = Vec::new();
    write_ledger(&result.ledger, &mut buf, b',')?;
    rec.write("ledger.csv", &buf)?;
    let mut buf = Vec::new();
    write_daily(&result.dates, &result.daily, &mut buf, b',')?;
    rec.write("daily.csv", &buf)?;
    rec.finish("backtest", &cfg, cfg.seed)
}

fn experiment(c: &Common, sims: Option<usize>) -> Result<PathBuf> {
    let mut cfg: ExperimentRunConfig = read_config(&c.config)?;
    cfg.resolve(&config_dir(&c.config)?);
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = sims {
        cfg.n_sims = n;
    }
    let panel = cfg.panel.load()?;
    let report = run_randomized_experiment(&panel, &cfg.build()?)?;
    if report.dropped > 0 {
        eprintln!(
            "dropped {} of {} simulations",
            report.dropped, report.n_sims
        );
    }
    let mut rec = Recorder::new(&c.out)?;
    rec.write("report.json", (report.to_json()? + "\n").as_bytes())?;
    let mut buf = Vec::new();
    report.write_table(&mut buf, b',')?;
    rec.write("table.csv", &buf)?;
    rec.finish("experiment", &cfg, cfg.seed)
}

fn world(cfg: &DynmodelConfig, n: usize, t: usize, angle: f64) -> Result<RegimeWorld> {
    let eigenvalues = match &cfg.eigenvalues {
        Some(e) => {
            if e.len() != cfg.states {
                bail!(
                    "`eigenvalues` lists {} states but `states` = {}",
                    e.len(),
                    cfg.states
                );
            }
            e.clone()
        }
        None => {
            let s = &cfg.spectrum;
            vec![exponential_spectrum(n, s.scale, s.decay, s.floor); cfg.states]
        }
    };
    let planes = cfg.planes.min(n / 2);
    let w = build_cyclic_world(
        n,
        &eigenvalues,
        &RotationSpec::strided(angle, planes, planes),
        t,
        cfg.seed,
    )?;
    Ok(if cfg.stay_prob > 0.0 {
        w.with_persistence(cfg.stay_prob)?
    } else {
        w
    })
}

#[derive(Serialize)]
struct DynmodelSummary {
    ao_loss_mean: f64,
    nls_loss_mean: f64,
    ao_win_rate: f64,
    independence_gap: Option<f64>,
    ao_profile: Vec<f64>,
}

fn dynmodel(c: &Common) -> Result<PathBuf> {
    let mut cfg: DynmodelConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.states < 2 {
        bail!("the AO/NLS comparison needs `states` >= 2 (a static world has nothing to compare)");
    }
    let base = world(&cfg, cfg.n, cfg.t, cfg.angle)?;
    let cmp = frobenius_compare(&base, cfg.n_slices, cfg.seed)?;
    let gap = if cfg.independence_slices > 0 {
        Some(independence_check(
            &base,
            cfg.independence_slices,
            cfg.seed,
        )?)
    } else {
        None
    };

    let angles = if cfg.sweep.angles.is_empty() {
        vec![cfg.angle]
    } else {
        cfg.sweep.angles.clone()
    };
    let ts = if cfg.sweep.t.is_empty() {
        vec![cfg.t]
    } else {
        cfg.sweep.t.clone()
    };
    let ns = if cfg.sweep.n.is_empty() {
        vec![cfg.n]
    } else {
        cfg.sweep.n.clone()
    };
    let mut rows = Vec::new();
    for &angle in &angles {
        for &t in &ts {
            for &n in &ns {
                let r = frobenius_compare(&world(&cfg, n, t, angle)?, cfg.n_slices, cfg.seed)?;
                rows.push(SweepRow {
                    angle,
                    t,
                    n,
                    ao_loss_mean: r.ao_mean,
                    nls_loss_mean: r.nls_mean,
                    ao_win_rate: r.ao_win_rate,
                });
            }
        }
    }

    let mut rec = Recorder::new(&c.out)?;
    let mut buf = Vec::new();
    write_sweep(&rows, &mut buf, b',')?;
    rec.write("sweep.csv", &buf)?;
    let mut buf = Vec::new();
    write_slice_losses(&cmp, &mut buf, b',')?;
    rec.write("slices.csv", &buf)?;
    rec.write_json(
        "summary.json",
        &DynmodelSummary {
            ao_loss_mean: cmp.ao_mean,
            nls_loss_mean: cmp.nls_mean,
            ao_win_rate: cmp.ao_win_rate,
            independence_gap: gap,
            ao_profile: cmp.profile.clone(),
        },
    )?;
    rec.finish("dynmodel", &cfg, cfg.seed)
}

#[derive(Serialize, serde::Deserialize)]
struct PanelOnly {
    panel: PanelConfig,
}

fn panel(c: &Common) -> Result<PathBuf> {
    let path = &c.config;
    // only the [panel] table matters here; other fields are ignored
    let mut cfg: PanelOnly = read_config(path)?;
    cfg.panel.resolve(&config_dir(path)?);
    let panel = cfg.panel.load()?;
    let mut rec = Recorder::new(&c.out)?;
    let mut buf = Vec::new();
    write_table(&panel, false, &mut buf, b',')?;
    rec.write("returns.csv", &buf)?;
    if panel.has_caps() {
        let mut buf = Vec::new();
        write_table(&panel, true, &mut buf, b',')?;
        rec.write("caps.csv", &buf)?;
    }
    rec.finish("panel", &cfg, 0)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let manifest = match &cli.command {
        Command::CalibrateAo(c) => {
            setup_threads(c.threads)?;
            calibrate(c)?
        }
        Command::Backtest(c) => {
            setup_threads(c.threads)?;
            backtest(c)?
        }
        Command::Experiment { common, sims } => {
            setup_threads(common.threads)?;
            experiment(common, *sims)?
        }
        Command::Dynmodel(c) => {
            setup_threads(c.threads)?;
            dynmodel(c)?
        }
        Command::Panel(c) => {
            setup_threads(c.threads)?;
            panel(c)?
        }
    };
    println!("{}", manifest.display());
    Ok(())
}
