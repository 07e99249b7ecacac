//! Modified rolling-window cross-validation for the shrinkage parameter.
//!
//! Serial dependence rules out ordinary CV, so each rolling window trains on
//! its first `T1` observations, discards the next `K`, and validates on the
//! final `T2`. The objective compares the shrunk training covariance against
//! the raw validation covariance blockwise in squared Hilbert-Schmidt norm.
//!
//! Because every rule rescales a block by a scalar that depends only on the
//! block's training HS norm, the objective for each candidate threshold
//! reduces to a quadratic in that scalar. The per-window, per-block
//! quantities `(z, |A|^2, <A,B>, |B|^2)` are therefore precomputed once and
//! the whole grid search costs almost nothing beyond the window covariances.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{quad_weight, FunctionalPanel, KernelMatrix};
use crate::shrink::ShrinkageRule;

/// Default gap between training and validation segments.
pub const DEFAULT_GAP: usize = 10;

/// Default number of candidates in the automatic threshold grid.
pub const DEFAULT_GRID_LEN: usize = 20;

/// One rolling window: half-open index ranges into the panel's time axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvWindow {
    /// Training indices.
    pub train: Range<usize>,
    /// Validation indices, exactly `gap` steps after the training segment.
    pub validate: Range<usize>,
}

/// Rolling-window layout for a panel of length `T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPlan {
    /// Gap size `K`.
    pub gap: usize,
    /// Training length per window.
    pub t1: usize,
    /// Validation length per window.
    pub t2: usize,
    /// The `K_circ = floor(T / 2K)` windows, stride `K`.
    pub windows: Vec<CvWindow>,
}

/// Builds the rolling-window plan.
///
/// `T1 = floor((T/2)(1 - 1/ln(T/2)))`, `T2 = floor(T/2) - T1`; window `k`
/// starts at `(k-1)K` (zero-based) and spans `floor(T/2) + K` indices: `T1`
/// training, `K` discarded, `T2` validating.
pub fn build_cv_plan(t: usize, gap: usize) -> Result<CvPlan> {
    if gap == 0 {
        return Err(Error::InvalidParameter("CV gap must be positive".into()));
    }
    if t < 2 * gap + 4 {
        return Err(Error::InvalidParameter(format!(
            "T = {t} too small for CV with gap {gap} (need T >= {})",
            2 * gap + 4
        )));
    }
    let half = t as f64 / 2.0;
    if half.ln() <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "T = {t} too small: ln(T/2) must exceed 1"
        )));
    }
    let t1 = (half * (1.0 - 1.0 / half.ln())).floor() as usize;
    let t2 = t / 2 - t1;
    if t1 == 0 || t2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "degenerate CV split T1 = {t1}, T2 = {t2}"
        )));
    }
    let span = t / 2 + gap;
    let n_windows = t / (2 * gap);
    let mut windows = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let start = k * gap;
        let end = start + span;
        if end > t {
            return Err(Error::InvalidParameter(format!(
                "window {k} spans {start}..{end} beyond T = {t}"
            )));
        }
        windows.push(CvWindow {
            train: start..start + t1,
            validate: start + t1 + gap..end,
        });
    }
    Ok(CvPlan {
        gap,
        t1,
        t2,
        windows,
    })
}

/// Precomputed per-block scalars of one window.
struct BlockStats {
    /// Training-block HS norm.
    z: f64,
    /// Squared HS norm of the training block.
    a2: f64,
    /// HS inner product of training and validation blocks.
    ab: f64,
    /// Squared HS norm of the validation block.
    b2: f64,
    /// 1 for diagonal blocks, 2 for off-diagonal (counts the mirror image).
    mult: f64,
    /// Whether this is a diagonal block (exempt under preserve-diagonal).
    diagonal: bool,
}

/// Second-moment matrix `(1/len) E^T E` of the given time slice, stacked over
/// subjects (residuals are centered on the full sample, not per window).
fn window_covariance(resid: &FunctionalPanel, range: &Range<usize>) -> Array2<f64> {
    let len = range.len();
    let total: usize = resid.grids().iter().map(|g| g.len()).sum();
    let mut stacked = Array2::zeros((len, total));
    let mut offset = 0;
    for i in 0..resid.n_subjects() {
        let v = resid.values(i);
        stacked
            .slice_mut(ndarray::s![.., offset..offset + v.ncols()])
            .assign(&v.slice(ndarray::s![range.clone(), ..]));
        offset += v.ncols();
    }
    stacked.t().dot(&stacked) / len as f64
}

fn collect_stats(resid: &FunctionalPanel, plan: &CvPlan) -> Result<Vec<BlockStats>> {
    if plan.windows.is_empty() {
        return Err(Error::InvalidParameter("empty CV plan".into()));
    }
    let t = resid.n_times();
    for w in &plan.windows {
        if w.validate.end > t {
            return Err(Error::DimensionMismatch {
                expected: w.validate.end,
                actual: t,
            });
        }
    }
    let n = resid.n_subjects();
    let grids = resid.grids();
    let offsets: Vec<usize> = grids
        .iter()
        .scan(0, |acc, g| {
            let o = *acc;
            *acc += g.len();
            Some(o)
        })
        .collect();
    let weights: Vec<f64> = grids.iter().map(quad_weight).collect();

    let mut stats = Vec::with_capacity(plan.windows.len() * n * (n + 1) / 2);
    for w in &plan.windows {
        let train = window_covariance(resid, &w.train);
        let validate = window_covariance(resid, &w.validate);
        for i in 0..n {
            for j in i..n {
                let (ri, rj) = (offsets[i]..offsets[i] + grids[i].len(),
                                offsets[j]..offsets[j] + grids[j].len());
                let a = train.slice(ndarray::s![ri.clone(), rj.clone()]);
                let b = validate.slice(ndarray::s![ri, rj]);
                let w_ij = weights[i] * weights[j];
                let mut a2 = 0.0;
                let mut ab = 0.0;
                let mut b2 = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    a2 += x * x;
                    ab += x * y;
                    b2 += y * y;
                }
                stats.push(BlockStats {
                    z: (a2 * w_ij).sqrt(),
                    a2: a2 * w_ij,
                    ab: ab * w_ij,
                    b2: b2 * w_ij,
                    mult: if i == j { 1.0 } else { 2.0 },
                    diagonal: i == j,
                });
            }
        }
    }
    Ok(stats)
}

fn objective_from_stats(
    stats: &[BlockStats],
    n: usize,
    n_windows: usize,
    rho: f64,
    rule: ShrinkageRule,
    preserve_diagonal: bool,
) -> f64 {
    let mut total = 0.0;
    for s in stats {
        let alpha = if s.diagonal && preserve_diagonal {
            1.0
        } else if s.z == 0.0 {
            0.0
        } else {
            rule.g(s.z, rho) / s.z
        };
        total += s.mult * (alpha * alpha * s.a2 - 2.0 * alpha * s.ab + s.b2);
    }
    total / ((n * n) as f64 * n_windows as f64)
}

/// Cross-validation objective at a single threshold.
pub fn cv_objective(
    resid: &FunctionalPanel,
    plan: &CvPlan,
    rho: f64,
    rule: ShrinkageRule,
    preserve_diagonal: bool,
) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold rho must be nonnegative, got {rho}"
        )));
    }
    rule.validate()?;
    let stats = collect_stats(resid, plan)?;
    Ok(objective_from_stats(
        &stats,
        resid.n_subjects(),
        plan.windows.len(),
        rho,
        rule,
        preserve_diagonal,
    ))
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoSelection {
    /// Minimizing threshold (ties broken toward the larger candidate).
    pub rho: f64,
    /// Candidate grid in the order evaluated.
    pub grid: Vec<f64>,
    /// Objective value per candidate.
    pub objectives: Vec<f64>,
}

/// Grid search for the threshold minimizing [`cv_objective`].
pub fn select_rho(
    resid: &FunctionalPanel,
    plan: &CvPlan,
    rule: ShrinkageRule,
    grid: &[f64],
    preserve_diagonal: bool,
) -> Result<RhoSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty rho grid".into()));
    }
    for &rho in grid {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid rho candidate {rho}"
            )));
        }
    }
    rule.validate()?;
    let stats = collect_stats(resid, plan)?;
    let n = resid.n_subjects();
    let n_windows = plan.windows.len();
    let objectives: Vec<f64> = grid
        .iter()
        .map(|&rho| objective_from_stats(&stats, n, n_windows, rho, rule, preserve_diagonal))
        .collect();
    let mut best = 0;
    for (idx, &value) in objectives.iter().enumerate().skip(1) {
        let better = value < objectives[best]
            || (value == objectives[best] && grid[idx] > grid[best]);
        if better {
            best = idx;
        }
    }
    Ok(RhoSelection {
        rho: grid[best],
        grid: grid.to_vec(),
        objectives,
    })
}

/// Default candidate grid: `n` log-spaced values between the 10th percentile
/// and the maximum of the off-diagonal block HS norms of `cov`.
pub fn default_rho_grid(cov: &KernelMatrix, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("grid length must be positive".into()));
    }
    let subjects = cov.n();
    let mut norms = Vec::with_capacity(subjects * (subjects - 1) / 2);
    for i in 0..subjects {
        for j in (i + 1)..subjects {
            norms.push(cov.block_hs_norm(i, j));
        }
    }
    norms.retain(|v| *v > 0.0);
    if norms.is_empty() {
        return Err(Error::InvalidParameter(
            "all off-diagonal blocks are zero; no threshold grid can be formed".into(),
        ));
    }
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let hi = *norms.last().unwrap();
    // Linear-interpolation 10th percentile, matching the usual convention.
    let pos = 0.1 * (norms.len() - 1) as f64;
    let lo_idx = pos.floor() as usize;
    let frac = pos - lo_idx as f64;
    let lo = if lo_idx + 1 < norms.len() {
        norms[lo_idx] * (1.0 - frac) + norms[lo_idx + 1] * frac
    } else {
        norms[lo_idx]
    };
    if n == 1 {
        return Ok(vec![hi]);
    }
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (log_lo + (log_hi - log_lo) * k as f64 / (n - 1) as f64).exp())
        .collect())
}
