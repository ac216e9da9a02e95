//! Average Oracle: calibrate a rank-indexed eigenvalue profile from many
//! historical (in-sample, out-of-sample) window pairs, then apply it to fresh
//! sample eigenvectors.
//!
//! Calibration and application both work on correlation matrices. Volatilities
//! are put back with the in-sample sample standard deviations, so a profile is
//! dimensionless and can be reused on later periods.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_corr, CovEstimate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{sample_universe, select_universe, ReturnPanel};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AOProfile {
    pub n: usize,
    pub delta_t_in: usize,
    pub delta_t_out: usize,
    pub pairs: usize,
    /// Descending, non-negative, summing to `n`.
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel_id: Option<String>,
}

impl AOProfile {
    /// Builds a profile from raw rank-wise values, normalizing the sum to `n`.
    pub fn from_raw(
        raw: &[f64],
        delta_t_in: usize,
        delta_t_out: usize,
        pairs: usize,
    ) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty profile".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "profile entries must be finite and non-negative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("profile sums to zero".into()));
        }
        let scale = n as f64 / total;
        let mut eigenvalues: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            n,
            delta_t_in,
            delta_t_out,
            pairs,
            eigenvalues,
            panel_id: None,
        })
    }

    /// Profile of all ones (the identity spectrum).
    pub fn flat(n: usize) -> Self {
        Self {
            n,
            delta_t_in: 0,
            delta_t_out: 0,
            pairs: 0,
            eigenvalues: vec![1.0; n],
            panel_id: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.eigenvalues.len() != p.n {
            return Err(Error::DimensionMismatch {
                expected: p.n,
                actual: p.eigenvalues.len(),
            });
        }
        Ok(p)
    }
}

/// One calibration draw: anchor day, the assets used, and their oracle eigenvalues.
#[derive(Debug, Clone)]
pub struct CalibrationPair {
    pub anchor: usize,
    pub assets: Vec<usize>,
    pub oracle: Vec<f64>,
}

fn standardize_with(x: &DMatrix<f64>, means: &[f64], sds: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let sd = if sds[j] > 0.0 { sds[j] } else { 1.0 };
        (x[(i, j)] - means[j]) / sd
    })
}

/// Oracle eigenvalues `v̂_kᵀ Ĉ_out v̂_k` for one window pair.
///
/// `v̂_k` are the eigenvectors (descending eigenvalues) of the in-sample
/// correlation. `Ĉ_out` is the second moment of the out-of-sample returns
/// standardized with in-sample means and volatilities.
pub fn oracle_eigenvalues(in_sample: &DMatrix<f64>, out_sample: &DMatrix<f64>) -> Result<Vec<f64>> {
    if in_sample.ncols() != out_sample.ncols() {
        return Err(Error::DimensionMismatch {
            expected: in_sample.ncols(),
            actual: out_sample.ncols(),
        });
    }
    if in_sample.nrows() < 2 || out_sample.nrows() == 0 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: in_sample.nrows().min(out_sample.nrows()),
        });
    }
    let (means, sds) = linalg::column_moments(in_sample);
    let z_in = standardize_with(in_sample, &means, &sds);
    let c_in = z_in.transpose() * &z_in / in_sample.nrows() as f64;
    let eig = linalg::sym_eigen(&c_in);
    let z_out = standardize_with(out_sample, &means, &sds);
    let c_out = z_out.transpose() * &z_out / out_sample.nrows() as f64;
    Ok(linalg::diag_of_congruence(&eig.vectors, &c_out))
}

fn calibration_pair(
    panel: &ReturnPanel,
    anchor: usize,
    n: usize,
    dt_in: usize,
    dt_out: usize,
    pair_seed: u64,
) -> Result<Option<CalibrationPair>> {
    let snap = select_universe(panel, anchor, dt_in, dt_out, panel.n_assets())?;
    if snap.eligible.len() < n {
        return Ok(None);
    }
    let assets = sample_universe(&snap, n, pair_seed)?;
    let x_in = panel.window(anchor + 1 - dt_in..anchor + 1, &assets);
    let x_out = panel.window(anchor + 1..anchor + 1 + dt_out, &assets);
    let oracle = oracle_eigenvalues(&x_in, &x_out)?;
    Ok(Some(CalibrationPair {
        anchor,
        assets,
        oracle,
    }))
}

/// Calibrates an Average Oracle profile of dimension `n` from `n_pairs`
/// randomly drawn anchors (distinct) on `panel`.
pub fn ao_calibrate(
    panel: &ReturnPanel,
    n: usize,
    dt_in: usize,
    dt_out: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<AOProfile> {
    let pairs = calibration_pairs(panel, n, dt_in, dt_out, n_pairs, seed)?;
    let mut mean = vec![0.0; n];
    for p in &pairs {
        for (m, o) in mean.iter_mut().zip(&p.oracle) {
            *m += o;
        }
    }
    for m in &mut mean {
        *m /= pairs.len() as f64;
    }
    AOProfile::from_raw(&mean, dt_in, dt_out, pairs.len())
}

/// The individual window pairs behind [`ao_calibrate`], in draw order.
pub fn calibration_pairs(
    panel: &ReturnPanel,
    n: usize,
    dt_in: usize,
    dt_out: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<CalibrationPair>> {
    if n == 0 || n_pairs == 0 || dt_in < 2 || dt_out == 0 {
        return Err(Error::InvalidParameter(
            "n, n_pairs and dt_out must be positive and dt_in at least 2".into(),
        ));
    }
    let days = panel.n_days();
    let lo = dt_in - 1;
    let anchors_available = days.saturating_sub(dt_out).saturating_sub(lo);
    if anchors_available < n_pairs {
        return Err(Error::InsufficientHistory {
            requested: n_pairs,
            achievable: anchors_available,
        });
    }
    let mut anchors: Vec<usize> = (lo..lo + anchors_available).collect();
    anchors.shuffle(&mut seed::rng(seed::child_seed(
        seed,
        seed::stream::CALIBRATION,
        u64::MAX,
    )));

    let mut out = Vec::with_capacity(n_pairs);
    let mut cursor = 0;
    while out.len() < n_pairs && cursor < anchors.len() {
        let batch_len = (n_pairs - out.len()).min(anchors.len() - cursor);
        let batch: Vec<Result<Option<CalibrationPair>>> = (cursor..cursor + batch_len)
            .into_par_iter()
            .map(|i| {
                let pair_seed = seed::child_seed(seed, seed::stream::CALIBRATION, i as u64);
                calibration_pair(panel, anchors[i], n, dt_in, dt_out, pair_seed)
            })
            .collect();
        for p in batch {
            if let Some(p) = p? {
                out.push(p);
            }
        }
        cursor += batch_len;
    }
    if out.len() < n_pairs {
        return Err(Error::InsufficientHistory {
            requested: n_pairs,
            achievable: out.len(),
        });
    }
    Ok(out)
}

/// Replaces the in-sample correlation eigenvalues of `window` by `profile`
/// and rescales with the in-sample volatilities.
pub fn ao_apply(window: &DMatrix<f64>, profile: &AOProfile) -> Result<CovEstimate> {
    let n = window.ncols();
    if n != profile.n || profile.eigenvalues.len() != n {
        return Err(Error::DimensionMismatch {
            expected: profile.n,
            actual: n,
        });
    }
    let (corr, sds) = sample_corr(window)?;
    let eig = linalg::sym_eigen(&corr);
    let r_ao = linalg::reassemble(&eig.vectors, &profile.eigenvalues);
    let cov = linalg::corr_to_cov(&r_ao, &sds);
    let mut est = CovEstimate::new(linalg::symmetrize(&cov), "AO")
        .with_param("t", window.nrows() as f64)
        .with_param("profile_dt_in", profile.delta_t_in as f64);
    est.window = None;
    Ok(est)
}

/// Correlation part of an Average Oracle estimate and the eigenvectors used.
pub fn ao_correlation(
    window: &DMatrix<f64>,
    profile: &AOProfile,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if window.ncols() != profile.n {
        return Err(Error::DimensionMismatch {
            expected: profile.n,
            actual: window.ncols(),
        });
    }
    let (corr, _) = sample_corr(window)?;
    let eig = linalg::sym_eigen(&corr);
    let r_ao = linalg::reassemble(&eig.vectors, &profile.eigenvalues);
    Ok((r_ao, eig.vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::business_days;
    use chrono::NaiveDate;

    fn gaussian(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        DMatrix::from_fn(t, n, |_, _| 0.01 * crate::seed::normal(&mut rng))
    }

    fn iid_panel(days: usize, assets: usize, seed: u64) -> ReturnPanel {
        let r = gaussian(days, assets, seed);
        let dates = business_days(NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(), days);
        let ids = (0..assets).map(|i| format!("A{i}")).collect();
        ReturnPanel::new(dates, ids, r, None).unwrap()
    }

    #[test]
    fn profile_sums_to_n() {
        let p = AOProfile::from_raw(&[3.0, 1.0, 0.5, 0.5], 10, 5, 1).unwrap();
        assert!((p.eigenvalues.iter().sum::<f64>() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let raw = [1.0 / 3.0, 0.1 + 0.2, std::f64::consts::PI, 1e-17];
        let p = AOProfile::from_raw(&raw, 240, 5, 17).unwrap();
        let back = AOProfile::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        for (a, b) in p.eigenvalues.iter().zip(&back.eigenvalues) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn json_field_names() {
        let p = AOProfile::from_raw(&[1.0, 1.0], 240, 5, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["n", "delta_t_in", "delta_t_out", "pairs", "eigenvalues"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn flat_profile_keeps_diagonal_and_flat_spectrum() {
        let x = gaussian(120, 6, 4);
        let est = ao_apply(&x, &AOProfile::flat(6)).unwrap();
        let (_, sds) = sample_corr(&x).unwrap();
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            6,
            sds.iter().map(|s| s * s),
        ));
        assert!(linalg::frobenius_distance(&est.matrix, &expect) < 1e-14);
    }

    #[test]
    fn eigenvectors_are_preserved() {
        let x = gaussian(200, 5, 9);
        let profile = AOProfile::from_raw(&[2.0, 1.2, 0.9, 0.6, 0.3], 200, 5, 1).unwrap();
        let (r_ao, vectors) = ao_correlation(&x, &profile).unwrap();
        let e = linalg::sym_eigen(&r_ao);
        for k in 0..5 {
            let overlap = vectors.column(k).dot(&e.vectors.column(k)).abs();
            assert!(overlap > 1.0 - 1e-10, "rank {k}: {overlap}");
        }
        assert!((r_ao.trace() - 5.0).abs() < 1e-9);
        let rebuilt = linalg::reassemble(&vectors, &profile.eigenvalues);
        assert!(linalg::frobenius_distance(&rebuilt, &r_ao) < 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = gaussian(50, 4, 1);
        assert!(matches!(
            ao_apply(&x, &AOProfile::flat(5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identity_world_profile_is_flat() {
        let panel = iid_panel(3000, 12, 77);
        let p = ao_calibrate(&panel, 10, 1000, 200, 60, 5).unwrap();
        assert!((p.eigenvalues.iter().sum::<f64>() - 10.0).abs() < 1e-9);
        for v in &p.eigenvalues {
            assert!((v - 1.0).abs() < 0.1, "{:?}", p.eigenvalues);
        }
    }

    #[test]
    fn insufficient_history_reports_achievable_count() {
        let panel = iid_panel(100, 5, 1);
        match ao_calibrate(&panel, 3, 60, 20, 50, 1) {
            Err(Error::InsufficientHistory {
                requested,
                achievable,
            }) => {
                assert_eq!(requested, 50);
                assert_eq!(achievable, 100 - 20 - 59);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_is_deterministic() {
        let panel = iid_panel(600, 8, 3);
        let a = ao_calibrate(&panel, 6, 100, 20, 30, 42).unwrap();
        let b = ao_calibrate(&panel, 6, 100, 20, 30, 42).unwrap();
        assert_eq!(a, b);
    }
}
