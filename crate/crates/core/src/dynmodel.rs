//! Regime-switching covariance world.
//!
//! Time is cut into slices of `T` days. Within a slice the true covariance is
//! one of `S` states `C_s = V_s diag(λ_s) V_sᵀ`; at each slice boundary the
//! state moves according to a row-stochastic transition table `W`. This
//! module simulates such worlds and compares the Average Oracle built from
//! consecutive slice pairs with the same-state nonlinear-shrinkage oracle,
//! both measured against the covariance of the following slice.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::sample_cov;
use crate::linalg;
use crate::seed;

/// Common angle applied in a set of eigen-index planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub angle: f64,
    /// Pairs of eigenvector indices; each pair is rotated by `angle`.
    pub planes: Vec<(usize, usize)>,
}

impl RotationSpec {
    /// `count` disjoint planes (0,1), (2,3), ….
    pub fn adjacent(angle: f64, count: usize) -> Self {
        Self {
            angle,
            planes: (0..count).map(|p| (2 * p, 2 * p + 1)).collect(),
        }
    }

    /// `count` planes (p, p+stride) for p = 0..count.
    pub fn strided(angle: f64, count: usize, stride: usize) -> Self {
        Self {
            angle,
            planes: (0..count).map(|p| (p, p + stride)).collect(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !self.angle.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rotation angle {}",
                self.angle
            )));
        }
        for &(i, j) in &self.planes {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "rotation plane ({i}, {j}) invalid for dimension {n}"
                )));
            }
        }
        Ok(())
    }

    /// The orthogonal matrix `G` with `V_{s+1} = V_s G`.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let (s, c) = self.angle.sin_cos();
        let mut g = DMatrix::identity(n, n);
        for &(i, j) in &self.planes {
            let mut giv = DMatrix::identity(n, n);
            giv[(i, i)] = c;
            giv[(j, j)] = c;
            giv[(i, j)] = -s;
            giv[(j, i)] = s;
            g = g * giv;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeState {
    pub cov: DMatrix<f64>,
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeWorld {
    pub states: Vec<RegimeState>,
    /// Row-stochastic `W[i][j]` = probability of moving from state i to j.
    pub transition: DMatrix<f64>,
    pub stationary: Vec<f64>,
    /// Slice length in days.
    pub t: usize,
    pub n: usize,
}

fn stationary_of(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = w.nrows();
    // (Wᵀ − I)p = 0 with the last equation replaced by Σp = 1
    let mut a = w.transpose() - DMatrix::identity(s, s);
    let mut b = DVector::zeros(s);
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    b[s - 1] = 1.0;
    a.lu()
        .solve(&b)
        .map(|p| p.iter().copied().collect())
        .ok_or_else(|| {
            Error::InvalidParameter("transition table has no unique stationary law".into())
        })
}

/// Builds a world whose states follow each other in a cycle, with
/// `V_1` random and `V_{s+1} = V_s G` for the rotation `G`.
pub fn build_cyclic_world(
    n: usize,
    eigenvalues: &[Vec<f64>],
    rotation: &RotationSpec,
    t: usize,
    seed_value: u64,
) -> Result<RegimeWorld> {
    let mut rng = seed::rng(seed::child_seed(seed_value, seed::stream::WORLD, 0));
    let v1 = linalg::random_orthonormal(n.max(1), &mut rng);
    build_cyclic_world_from(n, v1, eigenvalues, rotation, t)
}

/// As [`build_cyclic_world`] with a caller-chosen first eigenbasis.
pub fn build_cyclic_world_from(
    n: usize,
    v1: DMatrix<f64>,
    eigenvalues: &[Vec<f64>],
    rotation: &RotationSpec,
    t: usize,
) -> Result<RegimeWorld> {
    let s_count = eigenvalues.len();
    if s_count == 0 || n == 0 || t < 2 {
        return Err(Error::InvalidParameter(
            "need S >= 1, n >= 1 and T >= 2".into(),
        ));
    }
    rotation.validate(n)?;
    for lam in eigenvalues {
        if lam.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: lam.len(),
            });
        }
        if lam.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "eigenvalues must be finite and non-negative".into(),
            ));
        }
    }
    if v1.shape() != (n, n) || (v1.transpose() * &v1 - DMatrix::identity(n, n)).amax() > 1e-10 {
        return Err(Error::InvalidParameter(
            "first eigenbasis must be n×n orthonormal".into(),
        ));
    }
    let g = rotation.matrix(n);
    let mut v = v1;
    let mut states = Vec::with_capacity(s_count);
    for lam in eigenvalues {
        states.push(RegimeState {
            cov: linalg::symmetrize(&linalg::reassemble(&v, lam)),
            vectors: v.clone(),
            values: lam.clone(),
        });
        v = &v * &g;
    }
    let mut transition = DMatrix::zeros(s_count, s_count);
    for i in 0..s_count {
        transition[(i, (i + 1) % s_count)] = 1.0;
    }
    let stationary = vec![1.0 / s_count as f64; s_count];
    Ok(RegimeWorld {
        states,
        transition,
        stationary,
        t,
        n,
    })
}

impl RegimeWorld {
    pub fn s(&self) -> usize {
        self.states.len()
    }

    /// Replaces the transition table by "stay with probability `p`, else
    /// advance one step in the cycle".
    pub fn with_persistence(mut self, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "stay probability {p} outside [0, 1)"
            )));
        }
        let s = self.s();
        if s == 1 {
            return Ok(self);
        }
        let mut w = DMatrix::zeros(s, s);
        for i in 0..s {
            w[(i, i)] += p;
            w[(i, (i + 1) % s)] += 1.0 - p;
        }
        self.stationary = stationary_of(&w)?;
        self.transition = w;
        Ok(self)
    }

    /// `R_{i→j} = V_j V_iᵀ`.
    pub fn rotation(&self, i: usize, j: usize) -> DMatrix<f64> {
        &self.states[j].vectors * self.states[i].vectors.transpose()
    }

    fn deterministic(&self) -> bool {
        self.transition.iter().all(|w| *w == 0.0 || *w == 1.0)
    }

    /// State of slices `0..len`; slice 0 starts in state 0.
    pub fn state_path(&self, len: usize, seed_value: u64) -> Vec<usize> {
        let mut path = Vec::with_capacity(len);
        let mut rng = seed::rng(seed::child_seed(seed_value, seed::stream::WORLD, 1));
        let mut s = 0usize;
        for k in 0..len {
            if k > 0 {
                s = if self.deterministic() {
                    (0..self.s())
                        .find(|&j| self.transition[(s, j)] == 1.0)
                        .unwrap_or(s)
                } else {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut next = self.s() - 1;
                    for j in 0..self.s() {
                        acc += self.transition[(s, j)];
                        if u < acc {
                            next = j;
                            break;
                        }
                    }
                    next
                };
            }
            path.push(s);
        }
        path
    }

    fn draw(&self, state: usize, k: usize, seed_value: u64) -> DMatrix<f64> {
        let st = &self.states[state];
        let root: Vec<f64> = st.values.iter().map(|v| v.sqrt()).collect();
        let l = &st.vectors * DMatrix::from_diagonal(&DVector::from_vec(root));
        let mut rng = seed::rng(seed::child_seed(seed_value, seed::stream::SLICE, k as u64));
        let z = DMatrix::from_fn(self.t, self.n, |_, _| seed::normal(&mut rng));
        z * l.transpose()
    }
}

/// `T` i.i.d. zero-mean Gaussian draws with the covariance of slice `k`.
pub fn simulate_slice(world: &RegimeWorld, k: usize, seed_value: u64) -> DMatrix<f64> {
    let state = world.state_path(k + 1, seed_value)[k];
    world.draw(state, k, seed_value)
}

/// `o_k = v̂_kᵀ C v̂_k` for every column of `v_hat`.
pub fn oracle_eigs(v_hat: &DMatrix<f64>, c_next: &DMatrix<f64>) -> Vec<f64> {
    linalg::diag_of_congruence(v_hat, c_next)
}

/// `(V̂ᵀV)∘² λ`: the same quantity as [`oracle_eigs`] written through the
/// squared overlap matrix.
pub fn overlap_eigs(v_hat: &DMatrix<f64>, v: &DMatrix<f64>, lambda: &[f64]) -> Vec<f64> {
    let o = squared_overlap(v_hat, v);
    (o * DVector::from_column_slice(lambda))
        .iter()
        .copied()
        .collect()
}

/// Same-state oracle of nonlinear shrinkage: `(V̂ᵀV_true)∘² λ`.
pub fn nls_oracle_eigs(v_hat: &DMatrix<f64>, v_true: &DMatrix<f64>, lambda: &[f64]) -> Vec<f64> {
    overlap_eigs(v_hat, v_true, lambda)
}

pub fn squared_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a.transpose() * b).map(|x| x * x)
}

/// Sample eigensystem of one slice.
fn slice_eigen(x: &DMatrix<f64>) -> linalg::Eigen {
    linalg::sym_eigen(&sample_cov(x).expect("slices have T >= 2").matrix)
}

/// One consecutive slice pair: estimated eigenvectors at k, sample
/// eigensystem at k+1 and the states involved.
struct SlicePair {
    from: usize,
    to: usize,
    /// `(V̂_kᵀ V̂_{k+1})∘²`
    overlap: DMatrix<f64>,
    next_values: Vec<f64>,
    oracle: Vec<f64>,
}

fn slice_pairs(world: &RegimeWorld, n_slices: usize, seed_value: u64) -> Vec<SlicePair> {
    let path = world.state_path(n_slices, seed_value);
    let eigs: Vec<linalg::Eigen> = (0..n_slices)
        .into_par_iter()
        .map(|k| slice_eigen(&world.draw(path[k], k, seed_value)))
        .collect();
    (0..n_slices - 1)
        .map(|k| {
            let (cur, next) = (&eigs[k], &eigs[k + 1]);
            let next_values: Vec<f64> = next.values.iter().copied().collect();
            let overlap = squared_overlap(&cur.vectors, &next.vectors);
            let oracle = (&overlap * DVector::from_column_slice(&next_values))
                .iter()
                .copied()
                .collect();
            SlicePair {
                from: path[k],
                to: path[k + 1],
                overlap,
                next_values,
                oracle,
            }
        })
        .collect()
}

/// Squared overlaps `(V̂_kᵀ V̂_{k+1})∘²` and next-slice sample eigenvalues
/// for every consecutive slice pair.
pub fn overlap_samples(
    world: &RegimeWorld,
    n_slices: usize,
    seed_value: u64,
) -> Vec<(DMatrix<f64>, Vec<f64>)> {
    slice_pairs(world, n_slices, seed_value)
        .into_iter()
        .map(|p| (p.overlap, p.next_values))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoRegimeEigs {
    /// Rank-indexed mean oracle eigenvalues (covariance scale).
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub pairs: usize,
    /// Mean trace of the next-slice sample covariance.
    pub mean_next_trace: f64,
}

fn mean_and_se(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = rows.len() as f64;
    let n = rows[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m)
        .collect();
    let se = (0..n)
        .map(|j| {
            if rows.len() < 2 {
                return 0.0;
            }
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    (mean, se)
}

/// Average over consecutive slice pairs of the oracle eigenvalues of the
/// next slice's sample covariance in the current slice's sample eigenbasis.
pub fn ao_regime_eigs(
    world: &RegimeWorld,
    n_slices: usize,
    seed_value: u64,
) -> Result<AoRegimeEigs> {
    if n_slices < 2 {
        return Err(Error::InvalidParameter("need at least two slices".into()));
    }
    let pairs = slice_pairs(world, n_slices, seed_value);
    let rows: Vec<Vec<f64>> = pairs.iter().map(|p| p.oracle.clone()).collect();
    let (mean, std_err) = mean_and_se(&rows);
    let mean_next_trace = pairs
        .iter()
        .map(|p| p.next_values.iter().sum::<f64>())
        .sum::<f64>()
        / pairs.len() as f64;
    Ok(AoRegimeEigs {
        mean,
        std_err,
        pairs: pairs.len(),
        mean_next_trace,
    })
}

/// Per-transition split of the Average Oracle: `Σ_ij P̂_i Ŵ_ij · mean_ij`,
/// with `P̂`, `Ŵ` the empirical slice-pair frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTerm {
    pub from: usize,
    pub to: usize,
    /// Empirical `P̂_i Ŵ_ij` (fraction of pairs with this transition).
    pub weight: f64,
    pub mean: Vec<f64>,
}

pub fn ao_transition_terms(
    world: &RegimeWorld,
    n_slices: usize,
    seed_value: u64,
) -> Result<Vec<TransitionTerm>> {
    if n_slices < 2 {
        return Err(Error::InvalidParameter("need at least two slices".into()));
    }
    let pairs = slice_pairs(world, n_slices, seed_value);
    let total = pairs.len() as f64;
    let mut terms = Vec::new();
    for i in 0..world.s() {
        for j in 0..world.s() {
            let rows: Vec<Vec<f64>> = pairs
                .iter()
                .filter(|p| p.from == i && p.to == j)
                .map(|p| p.oracle.clone())
                .collect();
            if rows.is_empty() {
                continue;
            }
            let (mean, _) = mean_and_se(&rows);
            terms.push(TransitionTerm {
                from: i,
                to: j,
                weight: rows.len() as f64 / total,
                mean,
            });
        }
    }
    Ok(terms)
}

/// Relative L2 gap between `mean(A∘λ)` and `mean(A)·mean(λ)` over
/// (squared overlap, eigenvalue) samples.
pub fn independence_gap(samples: &[(DMatrix<f64>, Vec<f64>)]) -> f64 {
    let m = samples.len() as f64;
    let n = samples[0].1.len();
    let mut prod = DVector::zeros(n);
    let mut a_mean = DMatrix::zeros(n, samples[0].0.ncols());
    let mut l_mean = DVector::zeros(n);
    for (a, l) in samples {
        let l = DVector::from_column_slice(l);
        prod += a * &l;
        a_mean += a;
        l_mean += l;
    }
    prod /= m;
    let fact = (a_mean / m) * (l_mean / m);
    (&prod - fact).norm() / prod.norm()
}

/// Independence gap of world-driven estimates, computed within each
/// transition (i, j) and combined with the empirical transition weights.
pub fn independence_check(world: &RegimeWorld, n_slices: usize, seed_value: u64) -> Result<f64> {
    if n_slices < 10 {
        return Err(Error::InvalidParameter(
            "independence check needs at least 10 slices".into(),
        ));
    }
    let pairs = slice_pairs(world, n_slices, seed_value);
    let total = pairs.len() as f64;
    let n = world.n;
    let mut diff = DVector::zeros(n);
    let mut whole = DVector::zeros(n);
    for i in 0..world.s() {
        for j in 0..world.s() {
            let group: Vec<(DMatrix<f64>, Vec<f64>)> = pairs
                .iter()
                .filter(|p| p.from == i && p.to == j)
                .map(|p| (p.overlap.clone(), p.next_values.clone()))
                .collect();
            if group.is_empty() {
                continue;
            }
            let w = group.len() as f64 / total;
            let m = group.len() as f64;
            let mut prod = DVector::zeros(n);
            let mut a = DMatrix::zeros(n, n);
            let mut l = DVector::zeros(n);
            for (ai, li) in &group {
                let li = DVector::from_column_slice(li);
                prod += ai * &li;
                a += ai;
                l += li;
            }
            let prod = prod / m;
            let fact = (a / m) * (l / m);
            diff += (&prod - fact) * w;
            whole += prod * w;
        }
    }
    Ok(diff.norm() / whole.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusComparison {
    pub ao_losses: Vec<f64>,
    pub nls_losses: Vec<f64>,
    pub ao_mean: f64,
    pub nls_mean: f64,
    /// Fraction of slices where the AO loss is strictly below the NLS-oracle loss.
    pub ao_win_rate: f64,
    /// The AO profile used (calibrated on an independent path).
    pub profile: Vec<f64>,
}

/// Per-slice Frobenius losses against the next slice's true covariance of
/// the Average Oracle (calibrated on an independent path of `n_slices`
/// slices) and of the same-state NLS oracle fed with the true eigenvalues.
pub fn frobenius_compare(
    world: &RegimeWorld,
    n_slices: usize,
    seed_value: u64,
) -> Result<FrobeniusComparison> {
    if world.s() < 2 {
        return Err(Error::InvalidParameter(
            "AO/NLS comparison needs a changing world (S >= 2)".into(),
        ));
    }
    if n_slices < 2 {
        return Err(Error::InvalidParameter("need at least two slices".into()));
    }
    let calib_seed = seed::child_seed(seed_value, seed::stream::CALIBRATION, 0);
    let profile = ao_regime_eigs(world, n_slices + 1, calib_seed)?.mean;

    let path = world.state_path(n_slices + 1, seed_value);
    let losses: Vec<(f64, f64)> = (0..n_slices)
        .into_par_iter()
        .map(|k| {
            let est = slice_eigen(&world.draw(path[k], k, seed_value));
            let cur = &world.states[path[k]];
            let target = &world.states[path[k + 1]].cov;
            let ao = linalg::reassemble(&est.vectors, &profile);
            let nls_eigs = nls_oracle_eigs(&est.vectors, &cur.vectors, &cur.values);
            let nls = linalg::reassemble(&est.vectors, &nls_eigs);
            (
                linalg::frobenius_distance(&ao, target),
                linalg::frobenius_distance(&nls, target),
            )
        })
        .collect();
    let ao_losses: Vec<f64> = losses.iter().map(|l| l.0).collect();
    let nls_losses: Vec<f64> = losses.iter().map(|l| l.1).collect();
    let m = n_slices as f64;
    let wins = losses.iter().filter(|(a, b)| a < b).count();
    Ok(FrobeniusComparison {
        ao_mean: ao_losses.iter().sum::<f64>() / m,
        nls_mean: nls_losses.iter().sum::<f64>() / m,
        ao_win_rate: wins as f64 / m,
        ao_losses,
        nls_losses,
        profile,
    })
}

/// Spectrum `floor + scale·exp(-i/decay)` used by the default worlds.
pub fn exponential_spectrum(n: usize, scale: f64, decay: f64, floor: f64) -> Vec<f64> {
    (0..n)
        .map(|i| floor + scale * (-(i as f64) / decay).exp())
        .collect()
}

/// Two states with the same spectrum, the second rotated by `angle` in the
/// planes (p, p+10) for p < 10, which mix large with small eigenvalues.
pub fn default_cyclic_world(
    n: usize,
    t: usize,
    angle: f64,
    seed_value: u64,
) -> Result<RegimeWorld> {
    let lam = exponential_spectrum(n, 10.0, 4.0, 0.5);
    let planes = (n / 2).min(10);
    build_cyclic_world(
        n,
        &[lam.clone(), lam],
        &RotationSpec::strided(angle, planes, planes),
        t,
        seed_value,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle: f64,
    pub t: usize,
    pub n: usize,
    pub ao_loss_mean: f64,
    pub nls_loss_mean: f64,
    pub ao_win_rate: f64,
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    w.write_record([
        "angle",
        "T",
        "n",
        "ao_loss_mean",
        "nls_loss_mean",
        "ao_win_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.angle.to_string(),
            r.t.to_string(),
            r.n.to_string(),
            r.ao_loss_mean.to_string(),
            r.nls_loss_mean.to_string(),
            r.ao_win_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-slice losses as delimited text: slice, ao_loss, nls_loss.
pub fn write_slice_losses<W: Write>(
    cmp: &FrobeniusComparison,
    out: W,
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    w.write_record(["slice", "ao_loss", "nls_loss"])?;
    for (k, (a, b)) in cmp.ao_losses.iter().zip(&cmp.nls_losses).enumerate() {
        w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
