//! Return panels and investment-universe construction.
//!
//! A [`ReturnPanel`] stores simple returns (and optionally capitalizations) as
//! day×asset matrices. Missing cells are stored as `NaN` and are never
//! confused with zero returns: use [`ReturnPanel::get`] to read a cell.
//!
//! Universe selection at anchor day `t` uses the in-sample rows
//! `t-Δt_in+1 ..= t` (exactly `Δt_in` days) and the out-of-sample rows
//! `t+1 ..= t+Δt_out`.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Maximum fraction of zero-or-missing in-sample returns an asset may have.
pub const MAX_ZERO_OR_MISSING: f64 = 0.20;
/// Pairs at or above this in-sample Pearson correlation are pruned.
pub const MAX_PAIR_CORRELATION: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    asset_ids: Vec<String>,
    returns: DMatrix<f64>,
    caps: Option<DMatrix<f64>>,
}

impl ReturnPanel {
    /// Builds a panel, checking date order, shapes and the `r > -1` bound.
    pub fn new(
        dates: Vec<NaiveDate>,
        asset_ids: Vec<String>,
        returns: DMatrix<f64>,
        caps: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        for w in dates.windows(2) {
            if w[1] == w[0] {
                return Err(Error::DuplicateDate(w[1].to_string()));
            }
            if w[1] < w[0] {
                return Err(Error::MalformedTable(format!(
                    "dates not increasing: {} after {}",
                    w[1], w[0]
                )));
            }
        }
        if returns.nrows() != dates.len() || returns.ncols() != asset_ids.len() {
            return Err(Error::MalformedTable(format!(
                "returns are {}x{}, expected {}x{}",
                returns.nrows(),
                returns.ncols(),
                dates.len(),
                asset_ids.len()
            )));
        }
        if let Some(c) = &caps {
            if c.shape() != returns.shape() {
                return Err(Error::MalformedTable(
                    "capitalization table shape differs from returns".into(),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::MalformedTable(format!("duplicate asset id {id}")));
            }
        }
        if let Some(bad) = returns.iter().find(|r| !r.is_nan() && **r <= -1.0) {
            return Err(Error::InvalidParameter(format!(
                "return {bad} is not above -1"
            )));
        }
        Ok(Self {
            dates,
            asset_ids,
            returns,
            caps,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_days(), self.n_assets())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn has_caps(&self) -> bool {
        self.caps.is_some()
    }

    /// Return of `asset` on `day`, `None` when missing.
    pub fn get(&self, day: usize, asset: usize) -> Option<f64> {
        let v = self.returns[(day, asset)];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_missing(&self, day: usize, asset: usize) -> bool {
        self.returns[(day, asset)].is_nan()
    }

    pub fn cap(&self, day: usize, asset: usize) -> Option<f64> {
        self.caps
            .as_ref()
            .map(|c| c[(day, asset)])
            .filter(|v| !v.is_nan())
    }

    /// Returns for `rows` × `assets` with missing cells imputed as zero.
    pub fn window(&self, rows: std::ops::Range<usize>, assets: &[usize]) -> DMatrix<f64> {
        let start = rows.start;
        DMatrix::from_fn(rows.len(), assets.len(), |i, j| {
            let v = self.returns[(start + i, assets[j])];
            if v.is_nan() {
                0.0
            } else {
                v
            }
        })
    }

    /// Per-asset returns on `day` for `assets`, missing imputed as zero.
    pub fn row(&self, day: usize, assets: &[usize]) -> Vec<f64> {
        assets
            .iter()
            .map(|&a| self.get(day, a).unwrap_or(0.0))
            .collect()
    }

    /// Equal-weighted cross-sectional mean of available returns per day.
    pub fn market_factor(&self) -> Vec<f64> {
        (0..self.n_days())
            .map(|d| {
                let (sum, count) = (0..self.n_assets())
                    .filter_map(|a| self.get(d, a))
                    .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect()
    }

    pub fn index_of_date(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// Options for reading delimited text tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Token that marks a missing cell in addition to the empty field.
    pub missing_token: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            missing_token: String::new(),
        }
    }
}

struct RawTable {
    ids: Vec<String>,
    rows: Vec<(NaiveDate, Vec<f64>)>,
}

fn read_table<R: Read>(reader: R, opts: &LoadOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::MalformedTable(
            "header needs a date column and at least one asset".into(),
        ));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::MalformedTable(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| Error::BadDate {
            row,
            value: rec[0].to_owned(),
        })?;
        let values = rec
            .iter()
            .skip(1)
            .zip(&ids)
            .map(|(cell, id)| {
                if cell.is_empty() || (!opts.missing_token.is_empty() && cell == opts.missing_token)
                {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::NonNumeric {
                            row,
                            column: id.clone(),
                            value: cell.to_owned(),
                        })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((date, values));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate(w[0].0.to_string()));
    }
    Ok(RawTable { ids, rows })
}

fn to_matrix(table: &RawTable) -> DMatrix<f64> {
    DMatrix::from_fn(table.rows.len(), table.ids.len(), |i, j| table.rows[i].1[j])
}

/// Reads a panel from delimited text readers (returns plus optional caps).
pub fn load_panel_from_readers<R: Read, C: Read>(
    returns: R,
    caps: Option<C>,
    opts: &LoadOptions,
) -> Result<ReturnPanel> {
    let ret = read_table(returns, opts)?;
    let caps = match caps {
        Some(c) => {
            let cap = read_table(c, opts)?;
            if cap.ids != ret.ids {
                return Err(Error::MalformedTable(
                    "capitalization header differs from returns header".into(),
                ));
            }
            if cap.rows.len() != ret.rows.len()
                || cap.rows.iter().zip(&ret.rows).any(|(a, b)| a.0 != b.0)
            {
                return Err(Error::MalformedTable(
                    "capitalization dates differ from return dates".into(),
                ));
            }
            Some(to_matrix(&cap))
        }
        None => None,
    };
    let dates = ret.rows.iter().map(|(d, _)| *d).collect();
    let matrix = to_matrix(&ret);
    ReturnPanel::new(dates, ret.ids, matrix, caps)
}

pub fn load_panel(returns: &Path, caps: Option<&Path>, opts: &LoadOptions) -> Result<ReturnPanel> {
    let r = std::fs::File::open(returns)?;
    let c = caps.map(std::fs::File::open).transpose()?;
    load_panel_from_readers(r, c, opts)
}

/// Writes a panel's returns (and optionally caps) in the same layout `load_panel` reads.
pub fn write_table<W: std::io::Write>(
    panel: &ReturnPanel,
    caps: bool,
    out: W,
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    let mut header = vec!["date".to_owned()];
    header.extend(panel.asset_ids.iter().cloned());
    w.write_record(&header)?;
    for (d, date) in panel.dates.iter().enumerate() {
        let mut rec = vec![date.format("%Y-%m-%d").to_string()];
        for a in 0..panel.n_assets() {
            let v = if caps {
                panel.cap(d, a)
            } else {
                panel.get(d, a)
            };
            rec.push(v.map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Universe eligible at an anchor day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSnapshot {
    pub anchor: usize,
    pub dt_in: usize,
    pub dt_out: usize,
    pub requested: usize,
    /// Column indices into the panel, ordered by capitalization at the anchor, descending.
    pub eligible: Vec<usize>,
    /// True when fewer than `requested` assets survived the filters.
    pub shortfall: bool,
}

impl UniverseSnapshot {
    pub fn ids<'a>(&self, panel: &'a ReturnPanel) -> Vec<&'a str> {
        self.eligible
            .iter()
            .map(|&a| panel.asset_ids[a].as_str())
            .collect()
    }
}

/// Rows `t-Δt_in+1 ..= t` as a half-open range, validated against the panel.
pub fn in_sample_rows(
    panel: &ReturnPanel,
    t: usize,
    dt_in: usize,
    dt_out: usize,
) -> Result<std::ops::Range<usize>> {
    let start = t as i64 + 1 - dt_in as i64;
    let end = (t + dt_out) as i64;
    if dt_in == 0 || start < 0 || end >= panel.n_days() as i64 {
        return Err(Error::WindowOutOfRange {
            start,
            end,
            len: panel.n_days(),
        });
    }
    Ok(start as usize..t + 1)
}

fn standardized(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss <= 0.0 {
        return None;
    }
    let scale = ss.sqrt();
    Some(col.iter().map(|v| (v - mean) / scale).collect())
}

/// Top-`n_top` assets at anchor `t` surviving the listing, data-quality and
/// correlation filters.
pub fn select_universe(
    panel: &ReturnPanel,
    t: usize,
    dt_in: usize,
    dt_out: usize,
    n_top: usize,
) -> Result<UniverseSnapshot> {
    let rows = in_sample_rows(panel, t, dt_in, dt_out)?;
    let first = rows.start;
    let last = t + dt_out;

    let mut candidates: Vec<(usize, f64)> = (0..panel.n_assets())
        .filter(|&a| !panel.is_missing(first, a) && !panel.is_missing(last, a))
        .filter(|&a| {
            let bad = rows
                .clone()
                .filter(|&d| panel.get(d, a).is_none_or(|r| r == 0.0))
                .count();
            (bad as f64) < MAX_ZERO_OR_MISSING * dt_in as f64
        })
        .filter_map(|a| {
            if panel.has_caps() {
                panel.cap(t, a).map(|c| (a, c))
            } else {
                Some((a, 0.0))
            }
        })
        .collect();
    // stable: equal caps keep column order
    candidates.sort_by(|x, y| y.1.total_cmp(&x.1));

    let mut kept: Vec<usize> = Vec::with_capacity(n_top);
    let mut kept_z: Vec<Vec<f64>> = Vec::with_capacity(n_top);
    for (a, _) in candidates {
        if kept.len() == n_top {
            break;
        }
        let col: Vec<f64> = rows
            .clone()
            .map(|d| panel.get(d, a).unwrap_or(0.0))
            .collect();
        let Some(z) = standardized(&col) else {
            continue;
        };
        let violates = kept_z.iter().any(|k| {
            let rho: f64 = k.iter().zip(&z).map(|(x, y)| x * y).sum();
            rho >= MAX_PAIR_CORRELATION
        });
        if !violates {
            kept.push(a);
            kept_z.push(z);
        }
    }

    Ok(UniverseSnapshot {
        anchor: t,
        dt_in,
        dt_out,
        requested: n_top,
        shortfall: kept.len() < n_top,
        eligible: kept,
    })
}

/// Draws `n` eligible assets uniformly without replacement.
pub fn sample_universe(snapshot: &UniverseSnapshot, n: usize, seed: u64) -> Result<Vec<usize>> {
    let pool = &snapshot.eligible;
    if n > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = seed::rng(seed);
    Ok(index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// Consecutive business days (Monday to Friday) starting at `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}
