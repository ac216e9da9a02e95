use std::f64::consts::PI;

use nalgebra::DMatrix;

use aofilter::dynmodel::{
    ao_regime_eigs, build_cyclic_world_from, exponential_spectrum, simulate_slice, RotationSpec,
};
use aofilter::estimators::{oracle_eigenvalues, AOProfile};

/// Normalized Sylvester-Hadamard basis: every entry is ±1/√n.
fn hadamard(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < n {
        let m = h.nrows();
        let mut next = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                next[(i, j)] = h[(i, j)];
                next[(i, j + m)] = h[(i, j)];
                next[(i + m, j)] = h[(i, j)];
                next[(i + m, j + m)] = -h[(i, j)];
            }
        }
        h = next;
    }
    h / (n as f64).sqrt()
}

struct Comparison {
    regime: Vec<f64>,
    std_err: Vec<f64>,
    estimator: Vec<f64>,
}

fn compare(n: usize, t: usize, slices: usize, seed: u64) -> Comparison {
    let mut lam = exponential_spectrum(n, 10.0, 3.0, 0.5);
    let total: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|v| *v *= n as f64 / total);
    let rot = RotationSpec::strided(PI / 2.0, 8, 8);
    let world = build_cyclic_world_from(n, hadamard(n), &[lam.clone(), lam], &rot, t).unwrap();
    for s in &world.states {
        for i in 0..n {
            assert!((s.cov[(i, i)] - 1.0).abs() < 1e-12);
        }
    }
    let regime = ao_regime_eigs(&world, slices, seed).unwrap();
    assert_eq!(regime.pairs, slices - 1);
    let data: Vec<_> = (0..slices)
        .map(|k| simulate_slice(&world, k, seed))
        .collect();
    let mut estimator = vec![0.0; n];
    for k in 0..slices - 1 {
        let o = oracle_eigenvalues(&data[k], &data[k + 1]).unwrap();
        for (r, v) in estimator.iter_mut().zip(o) {
            *r += v / (slices - 1) as f64;
        }
    }
    Comparison {
        regime: regime.mean,
        std_err: regime.std_err,
        estimator,
    }
}

fn max_rel_gap(c: &Comparison) -> f64 {
    c.regime
        .iter()
        .zip(&c.estimator)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max)
}

/// The regime-model average and the estimator-module calibration agree when
/// both see the same consecutive slices of a world whose states are
/// correlation matrices (Hadamard eigenbasis with quarter-turn plane swaps
/// keeps every diagonal entry at one). What remains is the O(1/T) effect of
/// standardizing with in-sample volatilities.
#[test]
fn regime_average_matches_estimator_calibration() {
    let (n, slices, seed) = (16, 200, 5);
    let short = compare(n, 200, slices, seed);
    let long = compare(n, 800, slices, seed);
    for k in 0..n {
        let (a, b, se) = (long.regime[k], long.estimator[k], long.std_err[k]);
        assert!(
            (a - b).abs() < 2.0 * se + 0.02 * b,
            "rank {k}: {a} {b} (se {se})"
        );
    }
    let (g_short, g_long) = (max_rel_gap(&short), max_rel_gap(&long));
    assert!(g_long < 0.5 * g_short, "gap {g_short} -> {g_long}");

    // both normalize to the same sorted profile; standard errors travel with their rank
    let from_estimator = AOProfile::from_raw(&long.estimator, 800, 800, slices - 1).unwrap();
    let scale = n as f64 / long.regime.iter().sum::<f64>();
    let mut regime: Vec<(f64, f64)> = long
        .regime
        .iter()
        .zip(&long.std_err)
        .map(|(m, s)| (m * scale, s * scale))
        .collect();
    regime.sort_by(|a, b| b.0.total_cmp(&a.0));
    for ((a, se), b) in regime.iter().zip(&from_estimator.eigenvalues) {
        assert!((a - b).abs() < 2.0 * se + 0.02 * b, "{a} {b} (se {se})");
    }
}
