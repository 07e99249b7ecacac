//! Implementations of the CLI subcommands, kept separate from argument
//! parsing so integration tests can drive them directly.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use funcov::cv::{build_cv_plan, default_rho_grid, select_rho, DEFAULT_GRID_LEN};
use funcov::dgp::{simulate_panel_rep, true_total_covariance, DgpConfig, DgpTruth};
use funcov::error::{Error, Result};
use funcov::fpca::{common_covariance, fit_factor_model, residuals, FactorFit};
use funcov::io;
use funcov::metrics::{correlation_matrix, ell1_error, ell2_error, max_error, relative_errors};
use funcov::panel::{center, FunctionalPanel, Grid, KernelMatrix};
use funcov::select::{select_factor_number, SelectionConfig};
use funcov::shrink::{
    sample_idio_covariance, shrink_covariance, total_covariance, ShrinkageRule,
};

/// Options shared by the estimation-flavored subcommands.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Fixed factor count; `None` selects it from the data.
    pub q: Option<usize>,
    /// Upper bound of the factor-number search.
    pub q_max: usize,
    /// Explicit selection penalty.
    pub penalty: Option<f64>,
    /// Constant for the automatic penalty.
    pub penalty_constant: f64,
    /// Fixed threshold; `None` cross-validates.
    pub rho: Option<f64>,
    /// Thresholding rule.
    pub rule: ShrinkageRule,
    /// Shrink diagonal blocks too (default leaves them untouched).
    pub shrink_diagonal: bool,
    /// CV gap size.
    pub cv_gap: usize,
    /// Explicit threshold grid; `None` builds the default one.
    pub rho_grid: Option<Vec<f64>>,
}

/// Hyperparameter record written next to every estimate.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Factor count used.
    pub q: usize,
    /// Where `q` came from: "flag" or "selected".
    pub q_source: String,
    /// Selection penalty (present when `q` was selected).
    pub penalty: Option<f64>,
    /// Threshold used.
    pub rho: f64,
    /// Where `rho` came from: "flag" or "cv".
    pub rho_source: String,
    /// Thresholding rule.
    pub rule: ShrinkageRule,
    /// Whether diagonal blocks were shrunk.
    pub shrink_diagonal: bool,
    /// CV gap (meaningful when `rho_source` is "cv").
    pub cv_gap: usize,
    /// Candidate grid the CV searched (empty when `rho` was fixed).
    pub rho_grid: Vec<f64>,
    /// Mean curves subtracted during centering, one per subject.
    pub mean_curves: Vec<Vec<f64>>,
    /// Smallest eigenvalue of the shrunk idiosyncratic matrix (diagnostic;
    /// no PSD projection is applied).
    pub min_eigenvalue_c_eps: f64,
}

/// Per-replication scoring record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Directory the estimate came from.
    pub dir: String,
    /// Errors of the idiosyncratic estimate against its oracle.
    pub ell1_eps: f64,
    /// See `ell1_eps`.
    pub ell2_eps: f64,
    /// See `ell1_eps`.
    pub max_eps: f64,
    /// Relative errors of the total estimate against its oracle.
    pub re1_x: f64,
    /// See `re1_x`.
    pub re2_x: f64,
}

/// Scoring report: per-replication records plus their averages.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    /// One record per scored directory.
    pub replications: Vec<ScoreRecord>,
    /// Field-wise means over the records.
    pub averages: ScoreRecord,
}

/// `simulate`: write `reps` panels plus truth bundles under numbered
/// directories below `out`.
pub fn cmd_simulate(cfg: &DgpConfig, reps: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    io::write_json(cfg, &out.join("campaign.json"))?;
    let results: Vec<Result<()>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (panel, truth) = simulate_panel_rep(cfg, rep)?;
            let dir = rep_dir(out, rep);
            fs::create_dir_all(&dir)?;
            io::write_panel(&panel, &dir.join("panel.csv"))?;
            io::write_truth(&truth, &dir.join("truth.json"))?;
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}

/// Replication directory layout used by `simulate`.
pub fn rep_dir(out: &Path, rep: u64) -> PathBuf {
    out.join(format!("rep-{rep:04}"))
}

/// `estimate`: the full pipeline from a panel file to covariance estimates.
pub fn cmd_estimate(panel_path: &Path, opts: &EstimateOptions, out: &Path) -> Result<()> {
    let raw = io::read_panel(panel_path)?;
    let centered = center(&raw)?;
    let mean_curves = raw.mean_curves();
    let t = centered.n_times();

    let (q, q_source, penalty) = match opts.q {
        Some(q) => {
            if q > t {
                return Err(Error::InvalidParameter(format!(
                    "q = {q} exceeds T = {t}"
                )));
            }
            (q, "flag".to_string(), None)
        }
        None => {
            let delta = funcov::fpca::gram_matrix(&centered)?;
            let cfg = SelectionConfig {
                q_max: opts.q_max.min(t.saturating_sub(1)),
                penalty: opts.penalty,
                constant: opts.penalty_constant,
            };
            let sel = select_factor_number(&delta, centered.n_subjects(), &cfg)?;
            (sel.q, "selected".to_string(), Some(sel.penalty))
        }
    };

    let fit = fit_factor_model(&centered, q)?;
    let resid = residuals(&centered, &fit)?;
    let c_chi = common_covariance(&fit);
    let c_eps_raw = sample_idio_covariance(&resid)?;

    let preserve_diagonal = !opts.shrink_diagonal;
    let (rho, rho_source, rho_grid) = match opts.rho {
        Some(r) => (r, "flag".to_string(), Vec::new()),
        None => {
            let plan = build_cv_plan(t, opts.cv_gap)?;
            let grid = match &opts.rho_grid {
                Some(g) => g.clone(),
                None => default_rho_grid(&c_eps_raw, DEFAULT_GRID_LEN)?,
            };
            let sel = select_rho(&resid, &plan, opts.rule, &grid, preserve_diagonal)?;
            (sel.rho, "cv".to_string(), sel.grid)
        }
    };

    let c_eps = shrink_covariance(&c_eps_raw, rho, opts.rule, preserve_diagonal)?;
    let c_x = total_covariance(&c_chi, &c_eps)?;

    let min_eig = {
        let (values, _) = funcov::linalg::sym_eig(c_eps.dense(), 1e-6)?;
        *values.last().unwrap()
    };

    fs::create_dir_all(out)?;
    io::write_kernel_matrix(&c_chi, &out.join("c_chi.csv"))?;
    io::write_kernel_matrix(&c_eps, &out.join("c_eps.csv"))?;
    io::write_kernel_matrix(&c_x, &out.join("c_x.csv"))?;
    io::write_factor_fit(&fit, &out.join("fit.json"))?;
    io::write_json(
        &Manifest {
            q,
            q_source,
            penalty,
            rho,
            rho_source,
            rule: opts.rule,
            shrink_diagonal: opts.shrink_diagonal,
            cv_gap: opts.cv_gap,
            rho_grid,
            mean_curves,
            min_eigenvalue_c_eps: min_eig,
        },
        &out.join("manifest.json"),
    )?;
    Ok(())
}

/// `select-q`: factor-number selection only.
pub fn cmd_select_q(
    panel_path: &Path,
    q_max: usize,
    penalty: Option<f64>,
    constant: f64,
    out: Option<&Path>,
) -> Result<String> {
    let raw = io::read_panel(panel_path)?;
    let centered = center(&raw)?;
    let delta = funcov::fpca::gram_matrix(&centered)?;
    let cfg = SelectionConfig {
        q_max: q_max.min(centered.n_times().saturating_sub(1)),
        penalty,
        constant,
    };
    let sel = select_factor_number(&delta, centered.n_subjects(), &cfg)?;
    let text = serde_json::to_string_pretty(&sel)?;
    if let Some(path) = out {
        fs::write(path, &text)?;
    }
    Ok(text)
}

/// `cv-rho`: threshold selection only (fits factors first to get residuals).
#[allow(clippy::too_many_arguments)]
pub fn cmd_cv_rho(
    panel_path: &Path,
    opts: &EstimateOptions,
    out: Option<&Path>,
) -> Result<String> {
    let raw = io::read_panel(panel_path)?;
    let centered = center(&raw)?;
    let t = centered.n_times();
    let q = match opts.q {
        Some(q) => q,
        None => {
            let delta = funcov::fpca::gram_matrix(&centered)?;
            let cfg = SelectionConfig {
                q_max: opts.q_max.min(t.saturating_sub(1)),
                penalty: opts.penalty,
                constant: opts.penalty_constant,
            };
            select_factor_number(&delta, centered.n_subjects(), &cfg)?.q
        }
    };
    let fit = fit_factor_model(&centered, q)?;
    let resid = residuals(&centered, &fit)?;
    let c_eps_raw = sample_idio_covariance(&resid)?;
    let plan = build_cv_plan(t, opts.cv_gap)?;
    let grid = match &opts.rho_grid {
        Some(g) => g.clone(),
        None => default_rho_grid(&c_eps_raw, DEFAULT_GRID_LEN)?,
    };
    let sel = select_rho(&resid, &plan, opts.rule, &grid, !opts.shrink_diagonal)?;
    let text = serde_json::to_string_pretty(&sel)?;
    if let Some(path) = out {
        fs::write(path, &text)?;
    }
    Ok(text)
}

/// Assembles the true idiosyncratic covariance matrix blockwise.
pub fn truth_idio_matrix(truth: &DgpTruth, grid: &Grid) -> Result<KernelMatrix> {
    let n = truth.omega.nrows();
    let mut out = KernelMatrix::zeros(vec![grid.clone(); n]);
    for i in 0..n {
        for j in 0..n {
            let k = funcov::dgp::true_idio_covariance(truth, i, j, grid)?;
            out.set_block(i, j, &k.values.view());
        }
    }
    Ok(out)
}

/// `score`: compare estimates in each directory against the truth bundle
/// stored alongside them.
pub fn cmd_score(dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::InvalidParameter("no directories to score".into()));
    }
    let mut records = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let truth = io::read_truth(&dir.join("truth.json"))?;
        let c_eps = io::read_kernel_matrix(&dir.join("c_eps.csv"))?;
        let c_x = io::read_kernel_matrix(&dir.join("c_x.csv"))?;
        let grid = c_x.grids()[0].clone();
        let t_eps = truth_idio_matrix(&truth, &grid)?;
        let t_x = true_total_covariance(&truth, &grid)?;
        let (re1, re2) = relative_errors(&c_x, &t_x)?;
        records.push(ScoreRecord {
            dir: dir.display().to_string(),
            ell1_eps: ell1_error(&c_eps, &t_eps)?,
            ell2_eps: ell2_error(&c_eps, &t_eps)?,
            max_eps: max_error(&c_eps, &t_eps)?,
            re1_x: re1,
            re2_x: re2,
        });
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&ScoreRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
    let averages = ScoreRecord {
        dir: "average".into(),
        ell1_eps: mean(&|r| r.ell1_eps),
        ell2_eps: mean(&|r| r.ell2_eps),
        max_eps: mean(&|r| r.max_eps),
        re1_x: mean(&|r| r.re1_x),
        re2_x: mean(&|r| r.re2_x),
    };
    let report = ScoreReport {
        replications: records,
        averages,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = out {
        fs::write(path, &text)?;
    }
    Ok(text)
}

/// `correlate`: emit correlation matrices for the total and idiosyncratic
/// estimates in a directory.
pub fn cmd_correlate(dir: &Path, sqrt_norm: bool, out: &Path) -> Result<()> {
    let c_x = io::read_kernel_matrix(&dir.join("c_x.csv"))?;
    let c_eps = io::read_kernel_matrix(&dir.join("c_eps.csv"))?;
    fs::create_dir_all(out)?;
    let corr_x = correlation_matrix(&c_x, sqrt_norm)?;
    let corr_eps = correlation_matrix(&c_eps, sqrt_norm)?;
    io::write_matrix_csv(&corr_x, &out.join("corr_x.csv"))?;
    io::write_matrix_csv(&corr_eps, &out.join("corr_eps.csv"))?;
    Ok(())
}

/// `cidr`: read a price CSV and write the CIDR panel.
pub fn cmd_cidr(prices: &Path, grid_len: usize, out: &Path) -> Result<Vec<String>> {
    let records = crate::cidr::read_price_csv(prices)?;
    let grid = Grid::uniform(0.0, 1.0, grid_len)?;
    let (panel, dropped) = crate::cidr::build_cidr(&records, &grid)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    io::write_panel(&panel, out)?;
    Ok(dropped)
}

/// Parses a `lo:hi:n` specification into a log-spaced grid.
pub fn parse_rho_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "bad rho grid '{spec}', expected lo:hi:n"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad rho grid lo '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad rho grid hi '{}'", parts[1])))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad rho grid n '{}'", parts[2])))?;
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "rho grid needs 0 < lo <= hi and n >= 1, got '{spec}'"
        )));
    }
    if n == 1 {
        return Ok(vec![hi]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Used by tests: does a panel round-trip through the estimate pipeline with
/// a fixed `q` and huge threshold reproduce the common part exactly?
pub fn residual_energy(panel: &FunctionalPanel, fit: &FactorFit) -> Result<f64> {
    let resid = residuals(panel, fit)?;
    let mut energy = 0.0;
    for i in 0..resid.n_subjects() {
        energy += resid.values(i).iter().map(|x| x * x).sum::<f64>();
    }
    Ok(energy)
}

/// Fraction of off-diagonal blocks that are identically zero.
pub fn offdiagonal_sparsity(km: &KernelMatrix) -> f64 {
    let n = km.n();
    if n < 2 {
        return 1.0;
    }
    let mut zero = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            total += 1;
            if km.block(i, j).iter().all(|x| *x == 0.0) {
                zero += 1;
            }
        }
    }
    zero as f64 / total as f64
}
