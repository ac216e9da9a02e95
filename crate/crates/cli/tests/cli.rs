use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const PANEL: &str = r#"
[panel]
source = "synthetic"
days = 600
n_assets = 40
seed = 11
spec = { n_states = 2, regime_length = 40, persistence = 0.5 }
"#;

fn run(dir: &Path, command: &str, body: &str, out: &str) -> Output {
    let cfg = dir.join(format!("{out}.toml"));
    std::fs::write(&cfg, body).unwrap();
    Command::new(env!("CARGO_BIN_EXE_aofilter"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .unwrap()
}

fn ok(dir: &Path, command: &str, body: &str, out: &str) {
    let o = run(dir, command, body, out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn backtest_body(method: &str, cost: f64) -> String {
    format!("seed = 2\nstart = 200\nn = 12\npool = 30\nhorizon = 200\ncost_rate = {cost}\n[method]\n{method}\n{PANEL}")
}

const NLS: &str = "name = \"NLS\"\ndt_in = 120\nweighting = { kind = \"gmv\", estimator = { kind = \"shrinkage\" } }";

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "backtest", &format!("seed = 1\nn = 5\npool = 10\nstart = 100\n[method]\n{NLS}\n[panel]\nsource = \"file\"\n"), "bad");
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("returns"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "backtest", &format!("sead = 1\n{}", backtest_body(NLS, 5e-4)), "bad");
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sead"));
}

#[test]
fn equal_weight_backtest_has_full_diversification() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "backtest", &backtest_body("name = \"EQ\"\ndt_in = 120\nside = \"long_only\"\nweighting = { kind = \"equal\" }", 5e-4), "eq");
    let m = json(dir.path().join("eq/metrics.json"));
    assert!((m["metrics"]["n_eff"].as_f64().unwrap() - 12.0).abs() < 1e-9);
    assert!((m["metrics"]["gross_lev"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let ledger = std::fs::read_to_string(dir.path().join("eq/ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1 + 200 / 5);
    let daily = std::fs::read_to_string(dir.path().join("eq/daily.csv")).unwrap();
    assert_eq!(daily.lines().count(), 1 + 200);
}

#[test]
fn long_only_gmv_is_fully_invested() {
    let dir = tempfile::tempdir().unwrap();
    let method = format!("{NLS}\nside = \"long_only\"");
    ok(dir.path(), "backtest", &backtest_body(&method, 5e-4), "lo");
    let m = json(dir.path().join("lo/metrics.json"));
    assert!((m["metrics"]["gross_lev"].as_f64().unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn doubling_costs_lowers_mean_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "backtest", &backtest_body(NLS, 5e-4), "c1");
    ok(dir.path(), "backtest", &backtest_body(NLS, 1e-3), "c2");
    let a = &json(dir.path().join("c1/metrics.json"))["metrics"];
    let b = &json(dir.path().join("c2/metrics.json"))["metrics"];
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap();
    assert!(f(b, "mean") < f(a, "mean"));
    assert_eq!(f(a, "turnover"), f(b, "turnover"));
    assert_eq!(f(a, "turnover_drift"), f(b, "turnover_drift"));
    // costs hit one day per period, so volatility moves only slightly
    assert!((f(a, "vol") - f(b, "vol")).abs() < 0.01 * f(a, "vol"));
}

#[test]
fn single_simulation_two_methods_gives_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "seed = 4\nn = 10\npool = 30\nn_sims = 1\nstart_range = [119, 300]\n[template]\nhorizon = 120\nuniverse_refresh = 120\n\
         [[methods]]\n{NLS}\n[[methods]]\nname = \"EQ\"\ndt_in = 60\nside = \"long_only\"\nweighting = {{ kind = \"equal\" }}\n{PANEL}"
    );
    let o = run(dir.path(), "experiment", &body, "x");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("x/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].starts_with("method,SR,MEAN,VOL,Turnover"));
    assert!(lines[1].starts_with("NLS,") && lines[2].starts_with("EQ,"));
    let report = json(dir.path().join("x/report.json"));
    assert_eq!(report["n_sims"], 1);
}

#[test]
fn dynmodel_sweep_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let body = "seed = 1\nn = 50\nt = 200\nn_slices = 100\nindependence_slices = 0\n[sweep]\nangles = [0.0, 0.39269908169872414]\n";
    ok(dir.path(), "dynmodel", body, "d");
    let summary = json(dir.path().join("d/summary.json"));
    assert!(summary["ao_win_rate"].as_f64().unwrap() >= 0.8);
    assert!(summary["independence_gap"].is_null());
    let sweep = std::fs::read_to_string(dir.path().join("d/sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    // a static world: both approaches see the same covariance every slice
    let (ao, nls) = (rows[0][3], rows[0][4]);
    assert!((ao - nls).abs() < 0.05 * nls, "{ao} {nls}");
    let slices = std::fs::read_to_string(dir.path().join("d/slices.csv")).unwrap();
    assert_eq!(slices.lines().count(), 1 + 100);
}

#[test]
fn dynmodel_needs_two_states() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "dynmodel", "seed = 1\nstates = 1\n", "d");
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("states"));
}

#[test]
fn panel_round_trips_through_file_source() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "panel", PANEL, "p");
    let body = "[panel]\nsource = \"file\"\nreturns = \"p/returns.csv\"\ncaps = \"p/caps.csv\"\n";
    ok(dir.path(), "panel", body, "q");
    for name in ["returns.csv", "caps.csv"] {
        let a = std::fs::read(dir.path().join("p").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("q").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let manifest = json(dir.path().join("q/manifest.json"));
    assert_eq!(manifest["command"], "panel");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn calibrated_profile_feeds_a_backtest() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "calibrate-ao", &format!("seed = 1\nn = 12\ndt_in = 120\ndt_out = 5\nn_pairs = 30\n{PANEL}"), "ao");
    let profile = json(dir.path().join("ao/profile.json"));
    let eigs: Vec<f64> = profile["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(eigs.len(), 12);
    assert!((eigs.iter().sum::<f64>() - 12.0).abs() < 1e-9);
    let method = "name = \"AO\"\ndt_in = 120\nweighting = { kind = \"gmv\", estimator = { kind = \"average_oracle\", profile = \"ao/profile.json\" } }";
    ok(dir.path(), "backtest", &backtest_body(method, 5e-4), "bt");
    let m = json(dir.path().join("bt/metrics.json"));
    assert_eq!(m["method"], "AO");
    assert_eq!(m["days"], 200);
}
