//! Data-driven choice of the number of factors via a penalized eigenvalue
//! criterion on the Gram matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default penalty constant.
///
/// The textbook choice is 1, but on panels whose factor strengths decay the
/// resulting penalty can swamp the eigenvalue gap once the true number of
/// factors is moderately large (the criterion accumulates `k * phi`, so the
/// usable penalty shrinks like `gap / q`). Halving the constant keeps the
/// criterion consistent across the factor counts this crate targets while
/// still penalizing overfitting.
pub const DEFAULT_PENALTY_CONSTANT: f64 = 0.5;

/// Configuration for factor-number selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Largest candidate factor number; the search runs over `0..=q_max`.
    pub q_max: usize,
    /// Explicit penalty value; when `None` the data-driven default is used.
    pub penalty: Option<f64>,
    /// Constant `c` in the default penalty.
    pub constant: f64,
}

impl SelectionConfig {
    /// Search up to `q_max` factors with the default penalty.
    pub fn new(q_max: usize) -> Self {
        Self {
            q_max,
            penalty: None,
            constant: DEFAULT_PENALTY_CONSTANT,
        }
    }
}

/// Outcome of the selection criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected number of factors.
    pub q: usize,
    /// Penalty value that was used.
    pub penalty: f64,
    /// Criterion values for `k = 1..=q_max + 1` (selection index minus one
    /// gives the factor count).
    pub criterion: Vec<f64>,
    /// Leading eigenvalues of `Delta / T` over the same range.
    pub eigenvalues: Vec<f64>,
}

/// Default penalty `c * nu_bar * (N^{-1/2} + T^{-1/2}) * ln(min(N, T))`.
///
/// `nu_bar` is the average eigenvalue `trace(Delta / T) / T`, which makes the
/// penalty scale-equivariant in the data.
pub fn default_penalty(nu_bar: f64, n: usize, t: usize, c: f64) -> f64 {
    let n = n as f64;
    let t = t as f64;
    c * nu_bar * (n.powf(-0.5) + t.powf(-0.5)) * n.min(t).ln()
}

/// Selects the number of factors from the Gram matrix `Delta`.
///
/// Minimizes `nu_k(Delta / T) + k * phi` over `k = 1..=q_max + 1` and returns
/// `k - 1`, so a panel with no factor structure yields `q = 0`. Ties resolve
/// to the smallest `k`.
pub fn select_factor_number(
    delta: &Array2<f64>,
    n_subjects: usize,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let t = delta.nrows();
    if config.q_max + 1 > t {
        return Err(Error::InvalidParameter(format!(
            "q_max = {} needs at least {} time points, panel has {}",
            config.q_max,
            config.q_max + 1,
            t
        )));
    }
    if n_subjects == 0 {
        return Err(Error::InvalidParameter("empty panel".into()));
    }
    let (values, _) = linalg::sym_eig(delta, 1e-8)?;
    let scaled: Vec<f64> = values.iter().map(|v| v / t as f64).collect();
    let nu_bar = scaled.iter().sum::<f64>() / t as f64;
    let penalty = match config.penalty {
        Some(p) => {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "penalty must be positive and finite, got {p}"
                )));
            }
            p
        }
        None => {
            let p = default_penalty(nu_bar, n_subjects, t, config.constant);
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "auto penalty came out nonpositive ({p}); check the constant and the data scale"
                )));
            }
            p
        }
    };

    let mut criterion = Vec::with_capacity(config.q_max + 1);
    let mut best = 0;
    for k in 1..=config.q_max + 1 {
        let value = scaled[k - 1] + k as f64 * penalty;
        criterion.push(value);
        if value < criterion[best] {
            best = k - 1;
        }
    }
    Ok(SelectionResult {
        q: best, // best is the zero-based index of the minimizing k
        penalty,
        eigenvalues: scaled[..config.q_max + 1].to_vec(),
        criterion,
    })
}
