//! Generalized functional shrinkage: sample idiosyncratic covariance,
//! blockwise thresholding on Hilbert-Schmidt norms, and the final low-rank
//! plus sparse covariance assembly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{hs_norm, FunctionalPanel, Kernel, KernelMatrix};

/// Default SCAD concavity parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;
/// Default adaptive-lasso exponent.
pub const DEFAULT_ALASSO_ETA: f64 = 3.0;

/// Thresholding rule applied to each block's Hilbert-Schmidt norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShrinkageRule {
    /// Keep the block untouched when its norm exceeds the threshold.
    Hard,
    /// Shrink every surviving block's norm by exactly the threshold.
    Soft,
    /// Smoothly clipped absolute deviation with concavity `a > 2`.
    Scad {
        /// Concavity parameter.
        a: f64,
    },
    /// Adaptive lasso with exponent `eta >= 1`.
    Alasso {
        /// Weight exponent.
        eta: f64,
    },
}

impl ShrinkageRule {
    /// SCAD with the literature-standard `a = 3.7`.
    pub fn scad() -> Self {
        ShrinkageRule::Scad { a: DEFAULT_SCAD_A }
    }

    /// Adaptive lasso with the literature-standard `eta = 3`.
    pub fn alasso() -> Self {
        ShrinkageRule::Alasso {
            eta: DEFAULT_ALASSO_ETA,
        }
    }

    /// Validates rule parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShrinkageRule::Scad { a } if !(a > 2.0 && a.is_finite()) => Err(
                Error::InvalidParameter(format!("SCAD parameter a must exceed 2, got {a}")),
            ),
            ShrinkageRule::Alasso { eta } if !(eta >= 1.0 && eta.is_finite()) => Err(
                Error::InvalidParameter(format!("alasso exponent eta must be >= 1, got {eta}")),
            ),
            _ => Ok(()),
        }
    }

    /// Shrunk norm `g(z)` for an input norm `z >= 0` at threshold `rho`.
    pub fn g(&self, z: f64, rho: f64) -> f64 {
        if z <= rho {
            return 0.0;
        }
        match *self {
            ShrinkageRule::Hard => z,
            ShrinkageRule::Soft => z - rho,
            ShrinkageRule::Scad { a } => {
                if z <= 2.0 * rho {
                    z - rho
                } else if z <= a * rho {
                    ((a - 1.0) * z - a * rho) / (a - 2.0)
                } else {
                    z
                }
            }
            ShrinkageRule::Alasso { eta } => z * (1.0 - (rho / z).powf(eta)).max(0.0),
        }
    }
}

impl std::str::FromStr for ShrinkageRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(ShrinkageRule::Hard),
            "soft" => Ok(ShrinkageRule::Soft),
            "scad" => Ok(ShrinkageRule::scad()),
            "alasso" => Ok(ShrinkageRule::alasso()),
            other => Err(Error::InvalidParameter(format!(
                "unknown shrinkage rule '{other}' (expected hard|soft|scad|alasso)"
            ))),
        }
    }
}

impl std::fmt::Display for ShrinkageRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShrinkageRule::Hard => write!(f, "hard"),
            ShrinkageRule::Soft => write!(f, "soft"),
            ShrinkageRule::Scad { .. } => write!(f, "scad"),
            ShrinkageRule::Alasso { .. } => write!(f, "alasso"),
        }
    }
}

/// Sample idiosyncratic covariance with blocks
/// `(1/T) sum_t eps_it(u) eps_jt(v)`.
pub fn sample_idio_covariance(resid: &FunctionalPanel) -> Result<KernelMatrix> {
    if !resid.is_centered() {
        return Err(Error::NotCentered);
    }
    let t = resid.n_times();
    if t == 0 {
        return Err(Error::InvalidParameter(
            "cannot form a covariance from zero time points".into(),
        ));
    }
    let grids = resid.grids().to_vec();
    let total: usize = grids.iter().map(|g| g.len()).sum();
    // Stack all subjects side by side and form (1/T) E^T E in one product.
    let mut stacked = Array2::zeros((t, total));
    let mut offset = 0;
    for i in 0..resid.n_subjects() {
        let v = resid.values(i);
        stacked
            .slice_mut(ndarray::s![.., offset..offset + v.ncols()])
            .assign(v);
        offset += v.ncols();
    }
    let data = stacked.t().dot(&stacked) / t as f64;
    KernelMatrix::from_dense(grids, data)
}

/// Applies the thresholding rule to one kernel: output `(g(z)/z) * k` with
/// `z` the kernel's HS norm.
pub fn apply_threshold(k: &Kernel, rho: f64, rule: ShrinkageRule) -> Result<Kernel> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold rho must be nonnegative, got {rho}"
        )));
    }
    rule.validate()?;
    let z = hs_norm(k);
    let scale = if z == 0.0 { 0.0 } else { rule.g(z, rho) / z };
    let mut out = k.clone();
    if scale == 0.0 {
        out.values.fill(0.0);
    } else if scale != 1.0 {
        out.values.mapv_inplace(|x| x * scale);
    }
    Ok(out)
}

/// Blockwise shrinkage of a symmetric covariance matrix.
///
/// Only blocks with `i <= j` are thresholded; the result is mirrored so the
/// output is exactly symmetric. With `preserve_diagonal` the diagonal blocks
/// pass through unshrunk.
pub fn shrink_covariance(
    cov: &KernelMatrix,
    rho: f64,
    rule: ShrinkageRule,
    preserve_diagonal: bool,
) -> Result<KernelMatrix> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold rho must be nonnegative, got {rho}"
        )));
    }
    rule.validate()?;
    let asym = cov.max_asymmetry();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let n = cov.n();
    let mut out = KernelMatrix::zeros(cov.grids().to_vec());
    for i in 0..n {
        for j in i..n {
            let block = cov.kernel(i, j);
            let shrunk = if i == j && preserve_diagonal {
                block
            } else {
                apply_threshold(&block, rho, rule)?
            };
            out.set_block(i, j, &shrunk.values.view());
            if i != j {
                out.set_block(j, i, &shrunk.values.t());
            }
        }
    }
    Ok(out)
}

/// Total covariance `C_X = C_chi + C_eps`.
pub fn total_covariance(c_chi: &KernelMatrix, c_eps: &KernelMatrix) -> Result<KernelMatrix> {
    c_chi.add(c_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Grid;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn flat_kernel(value: f64, n: usize) -> Kernel {
        let g = Grid::unit(n);
        Kernel::new(g.clone(), g, Array2::from_elem((n, n), value)).unwrap()
    }

    #[test]
    fn below_threshold_zeroes_for_every_rule() {
        let k = flat_kernel(0.5, 4); // HS norm 0.5
        for rule in [
            ShrinkageRule::Hard,
            ShrinkageRule::Soft,
            ShrinkageRule::scad(),
            ShrinkageRule::alasso(),
        ] {
            let out = apply_threshold(&k, 1.0, rule).unwrap();
            assert!(out.values.iter().all(|x| *x == 0.0), "rule {rule}");
        }
    }

    #[test]
    fn soft_halves_a_norm_two_kernel() {
        let k = flat_kernel(2.0, 3); // constant kernel, HS norm 2
        let out = apply_threshold(&k, 1.0, ShrinkageRule::Soft).unwrap();
        assert_abs_diff_eq!(hs_norm(&out), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.values[[0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scad_is_identity_past_a_rho() {
        let k = flat_kernel(5.0, 2); // HS norm 5 > 3.7 * 1
        let out = apply_threshold(&k, 1.0, ShrinkageRule::scad()).unwrap();
        for (a, b) in out.values.iter().zip(k.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn scad_middle_branch_value() {
        // z = 3, rho = 1, a = 3.7: g = ((2.7)(3) - 3.7) / 1.7 = 4.4 / 1.7.
        let rule = ShrinkageRule::scad();
        assert_abs_diff_eq!(rule.g(3.0, 1.0), 4.4 / 1.7, epsilon = 1e-12);
    }

    #[test]
    fn alasso_attenuation() {
        // z = 2, rho = 1, eta = 3: g = 2 (1 - 1/8) = 1.75.
        let rule = ShrinkageRule::alasso();
        assert_abs_diff_eq!(rule.g(2.0, 1.0), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn rho_zero_is_identity_for_continuous_rules() {
        let k = flat_kernel(1.3, 3);
        for rule in [
            ShrinkageRule::Hard,
            ShrinkageRule::Soft,
            ShrinkageRule::alasso(),
        ] {
            let out = apply_threshold(&k, 0.0, rule).unwrap();
            for (a, b) in out.values.iter().zip(k.values.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn negative_rho_rejected() {
        let k = flat_kernel(1.0, 2);
        assert!(apply_threshold(&k, -0.1, ShrinkageRule::Soft).is_err());
    }

    #[test]
    fn bad_rule_parameters_rejected() {
        let k = flat_kernel(1.0, 2);
        assert!(apply_threshold(&k, 0.5, ShrinkageRule::Scad { a: 2.0 }).is_err());
        assert!(apply_threshold(&k, 0.5, ShrinkageRule::Alasso { eta: 0.5 }).is_err());
    }

    #[test]
    fn rule_parsing_round_trip() {
        for name in ["hard", "soft", "scad", "alasso"] {
            let rule: ShrinkageRule = name.parse().unwrap();
            assert_eq!(rule.to_string(), name);
        }
        assert!("ridge".parse::<ShrinkageRule>().is_err());
    }

    #[test]
    fn single_curve_outer_product() {
        // The pair (f, -f) is centered and its covariance is exactly the
        // outer product f (x) f.
        let g = Grid::unit(3);
        let f = [1.0, -2.0, 0.5];
        let v = array![[f[0], f[1], f[2]], [-f[0], -f[1], -f[2]]];
        let panel = FunctionalPanel::new(vec![g], vec![v], true).unwrap();
        let cov = sample_idio_covariance(&panel).unwrap();
        let block = cov.block(0, 0);
        for s in 0..3 {
            for t in 0..3 {
                assert_abs_diff_eq!(block[[s, t]], f[s] * f[t], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_residuals_give_zero_covariance() {
        let g = Grid::unit(2);
        let panel = FunctionalPanel::new(
            vec![g.clone(), g],
            vec![Array2::zeros((3, 2)), Array2::zeros((3, 2))],
            true,
        )
        .unwrap();
        let cov = sample_idio_covariance(&panel).unwrap();
        assert!(cov.dense().iter().all(|x| *x == 0.0));
    }

    fn toy_covariance() -> KernelMatrix {
        // Two subjects with 2-point unit grids; hand-filled symmetric matrix.
        let g = Grid::unit(2);
        let mut m = KernelMatrix::zeros(vec![g.clone(), g]);
        m.set_block(0, 0, &array![[2.0, 0.5], [0.5, 2.0]].view());
        m.set_block(1, 1, &array![[3.0, -0.2], [-0.2, 3.0]].view());
        m.set_block(0, 1, &array![[0.4, 0.1], [0.2, 0.3]].view());
        m.set_block(1, 0, &array![[0.4, 0.2], [0.1, 0.3]].view());
        m
    }

    #[test]
    fn large_rho_leaves_block_diagonal() {
        let m = toy_covariance();
        let out = shrink_covariance(&m, 100.0, ShrinkageRule::Soft, true).unwrap();
        assert!(out.block(0, 1).iter().all(|x| *x == 0.0));
        assert!(out.block(1, 0).iter().all(|x| *x == 0.0));
        for (a, b) in out.block(0, 0).iter().zip(m.block(0, 0).iter())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_shrinks_when_flag_disabled() {
        let m = toy_covariance();
        let out = shrink_covariance(&m, 100.0, ShrinkageRule::Soft, false).unwrap();
        assert!(out.dense().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn output_is_exactly_symmetric() {
        let m = toy_covariance();
        let out = shrink_covariance(&m, 0.3, ShrinkageRule::alasso(), true).unwrap();
        assert_eq!(out.max_asymmetry(), 0.0);
    }

    #[test]
    fn total_covariance_adds_blockwise() {
        let m = toy_covariance();
        let sum = total_covariance(&m, &m).unwrap();
        for (a, b) in sum.dense().iter().zip(m.dense().iter()) {
            assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-14);
        }
    }
}
