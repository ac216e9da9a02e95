use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean.
///
/// Samples are sorted first so the interval does not depend on their order.
pub fn bootstrap_ci(
    samples: &[f64],
    level: f64,
    n_boot: usize,
    seed_value: u64,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: samples.len(),
        });
    }
    if n_boot < 100 {
        return Err(Error::InvalidParameter(format!(
            "n_boot {n_boot} below 100"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside (0, 1)"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut rng = seed::rng(seed_value);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| sorted[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&means, tail),
        quantile_sorted(&means, 1.0 - tail),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Flags the best mean plus every entry whose interval overlaps the best's.
///
/// Overlap is checked against the best interval only; chains are not followed.
/// Ties for best go to the first entry.
pub fn mark_best(means: &[f64], intervals: &[(f64, f64)], direction: Direction) -> Vec<bool> {
    let mut flags = vec![false; means.len()];
    let better = |a: f64, b: f64| match direction {
        Direction::HigherIsBetter => a > b,
        Direction::LowerIsBetter => a < b,
    };
    let mut best: Option<usize> = None;
    for (i, m) in means.iter().enumerate() {
        if m.is_nan() {
            continue;
        }
        if best.is_none_or(|b| better(*m, means[b])) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return flags;
    };
    let (blo, bhi) = intervals[b];
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        flags[i] = i == b || (!means[i].is_nan() && lo <= bhi && blo <= hi);
    }
    flags
}
