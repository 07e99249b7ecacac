//! Functional principal component analysis of a panel: Gram matrix, factor
//! scores, loading functions, the low-rank common covariance and residual
//! curves.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{quad_weight, FunctionalPanel, Grid, KernelMatrix};

/// Tolerance for the factor normalization precondition `(1/T) F^T F = I`.
const NORMALIZATION_TOL: f64 = 1e-6;

/// Estimated factor structure of a panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorFit {
    /// Number of factors.
    pub q: usize,
    /// `T x q` factor scores, normalized so `(1/T) F^T F = I`.
    pub factors: Array2<f64>,
    /// Per subject: `q x G_i` loading functions sampled on the subject grid.
    pub loadings: Vec<Array2<f64>>,
    /// Full descending spectrum of `Delta / T`.
    pub eigenvalues: Vec<f64>,
    /// Subject grids, kept so covariance assembly needs no panel.
    pub grids: Vec<Grid>,
}

/// `T x T` Gram matrix of integrated cross-time inner products,
/// `Delta_ts = (1/N) sum_i <X_it, X_is>`.
pub fn gram_matrix(panel: &FunctionalPanel) -> Result<Array2<f64>> {
    if !panel.is_centered() {
        return Err(Error::NotCentered);
    }
    let t = panel.n_times();
    let n = panel.n_subjects() as f64;
    let mut delta = Array2::zeros((t, t));
    for i in 0..panel.n_subjects() {
        let v = panel.values(i);
        let scale = quad_weight(panel.grid(i)) / n;
        // Delta += scale * V V^T, accumulated in fixed subject order.
        delta = delta + v.dot(&v.t()) * scale;
    }
    // Symmetrize away accumulation round-off.
    let sym = 0.5 * (&delta + &delta.t());
    Ok(sym)
}

/// Top-`q` eigenvectors of `Delta`, scaled by `sqrt(T)`, in descending
/// eigenvalue order with the leading-magnitude entry of each column positive.
pub fn estimate_factors(delta: &Array2<f64>, q: usize) -> Result<Array2<f64>> {
    let t = delta.nrows();
    if q > t {
        return Err(Error::InvalidParameter(format!(
            "q = {q} exceeds the number of time points {t}"
        )));
    }
    let (_, vectors) = linalg::sym_eig(delta, 1e-8)?;
    let scale = (t as f64).sqrt();
    let mut factors = Array2::zeros((t, q));
    for k in 0..q {
        for r in 0..t {
            factors[[r, k]] = vectors[[r, k]] * scale;
        }
    }
    Ok(factors)
}

/// Least-squares loading functions `Lambda_i = (1/T) sum_t X_it G_t`.
pub fn estimate_loadings(
    panel: &FunctionalPanel,
    factors: &Array2<f64>,
) -> Result<Vec<Array2<f64>>> {
    let t = panel.n_times();
    if factors.nrows() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: factors.nrows(),
        });
    }
    let q = factors.ncols();
    if q > 0 {
        let gram = factors.t().dot(factors) / t as f64;
        for r in 0..q {
            for c in 0..q {
                let want = if r == c { 1.0 } else { 0.0 };
                if (gram[[r, c]] - want).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidParameter(
                        "factors violate the (1/T) F^T F = I normalization".into(),
                    ));
                }
            }
        }
    }
    let scale = 1.0 / t as f64;
    Ok((0..panel.n_subjects())
        .map(|i| {
            // (q x T) . (T x G_i)
            let lam = factors.t().dot(panel.values(i)) * scale;
            lam
        })
        .collect())
}

/// Fits factors and loadings in one pass and records the spectrum of `Delta/T`.
pub fn fit_factor_model(panel: &FunctionalPanel, q: usize) -> Result<FactorFit> {
    let delta = gram_matrix(panel)?;
    let t = panel.n_times() as f64;
    let (values, _) = linalg::sym_eig(&delta, 1e-8)?;
    let factors = estimate_factors(&delta, q)?;
    let loadings = estimate_loadings(panel, &factors)?;
    Ok(FactorFit {
        q,
        factors,
        loadings,
        eigenvalues: values.iter().map(|v| v / t).collect(),
        grids: panel.grids().to_vec(),
    })
}

/// Low-rank common covariance with blocks
/// `C_{chi,ij}(u, v) = Lambda_i(u)^T Lambda_j(v)`.
pub fn common_covariance(fit: &FactorFit) -> KernelMatrix {
    let grids = fit.grids.clone();
    let total: usize = grids.iter().map(Grid::len).sum();
    // Stack loadings into q x (sum G) and form L^T L in one pass.
    let mut stacked = Array2::zeros((fit.q, total));
    let mut offset = 0;
    for lam in &fit.loadings {
        stacked
            .slice_mut(ndarray::s![.., offset..offset + lam.ncols()])
            .assign(lam);
        offset += lam.ncols();
    }
    let data = stacked.t().dot(&stacked);
    KernelMatrix::from_dense(grids, data).expect("shapes agree by construction")
}

/// Residual panel `eps_it = X_it - Lambda_i^T G_t`, flagged centered.
pub fn residuals(panel: &FunctionalPanel, fit: &FactorFit) -> Result<FunctionalPanel> {
    if fit.factors.nrows() != panel.n_times() {
        return Err(Error::DimensionMismatch {
            expected: panel.n_times(),
            actual: fit.factors.nrows(),
        });
    }
    if fit.loadings.len() != panel.n_subjects() {
        return Err(Error::DimensionMismatch {
            expected: panel.n_subjects(),
            actual: fit.loadings.len(),
        });
    }
    let values: Vec<Array2<f64>> = (0..panel.n_subjects())
        .map(|i| {
            let fitted = fit.factors.dot(&fit.loadings[i]);
            let mut resid = panel.values(i) - &fitted;
            // The least-squares fit leaves means at numerical zero; snap tiny
            // column means so the centered invariant holds exactly.
            let means = resid.mean_axis(Axis(0)).unwrap();
            if means.iter().any(|m| m.abs() > 1e-12) {
                resid = resid - &means;
            }
            resid
        })
        .collect();
    FunctionalPanel::new(fit.grids.clone(), values, true)
}
