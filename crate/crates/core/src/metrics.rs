//! Error norms and correlation summaries for covariance-matrix estimates.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::KernelMatrix;

/// Relative eigenvalue floor used inside the relative-error measures.
pub const INV_SQRT_FLOOR_REL: f64 = 1e-10;

fn check_shapes(a: &KernelMatrix, b: &KernelMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            actual: b.n(),
        });
    }
    for (ga, gb) in a.grids().iter().zip(b.grids().iter()) {
        if ga.len() != gb.len() {
            return Err(Error::DimensionMismatch {
                expected: ga.len(),
                actual: gb.len(),
            });
        }
    }
    Ok(())
}

/// Discrete HS-style distance of block (i, j):
/// `sqrt((1/(G_i G_j)) sum_{s,t} diff^2)`.
fn block_distance(a: &KernelMatrix, b: &KernelMatrix, i: usize, j: usize) -> f64 {
    let ba = a.block(i, j);
    let bb = b.block(i, j);
    let scale = 1.0 / (ba.nrows() * ba.ncols()) as f64;
    let ss: f64 = ba
        .iter()
        .zip(bb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (ss * scale).sqrt()
}

/// Functional matrix `l1` norm of the difference: the worst row sum of
/// blockwise distances.
pub fn ell1_error(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| block_distance(a, b, i, j)).sum();
        worst = worst.max(row);
    }
    Ok(worst)
}

/// Functional matrix `l2` norm of the difference: the root of the sum of
/// squared blockwise distances.
pub fn ell2_error(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = block_distance(a, b, i, j);
            total += d * d;
        }
    }
    Ok(total.sqrt())
}

/// Functional max norm of the difference: the largest blockwise distance.
pub fn max_error(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max(block_distance(a, b, i, j));
        }
    }
    Ok(worst)
}

/// Inverse square root of a symmetric PSD matrix with eigenvalues clipped
/// below at `floor` before the `lambda^{-1/2}` reconstruction.
pub fn matrix_inv_sqrt(m: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue floor must be positive, got {floor}"
        )));
    }
    let (values, vectors) = linalg::sym_eig(m, 1e-8)?;
    let n = m.nrows();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lam = values[k].max(floor);
        let w = lam.powf(-0.5);
        for r in 0..n {
            for c in 0..n {
                out[[r, c]] += w * vectors[[r, k]] * vectors[[c, k]];
            }
        }
    }
    // Symmetrize away reconstruction round-off.
    let sym = 0.5 * (&out + &out.t());
    Ok(sym)
}

/// Relative errors (RE1, RE2) of `est` against `truth`.
///
/// RE1 averages `N^{-1/2} |C^{-1/2}(u_s,u_s) D(u_s,u_t) C^{-1/2}(u_t,u_t)|_F`
/// over all grid pairs `(s, t)`; RE2 restricts to the diagonal `t = s`.
/// Normalization uses the true covariance `C`, with its pointwise matrices
/// inverted under a relative eigenvalue floor.
pub fn relative_errors(est: &KernelMatrix, truth: &KernelMatrix) -> Result<(f64, f64)> {
    check_shapes(est, truth)?;
    let n = est.n();
    let g = truth.grids()[0].len();
    for grid in truth.grids() {
        if grid.len() != g {
            return Err(Error::InvalidGrid(
                "relative errors need a shared grid across subjects".into(),
            ));
        }
    }
    // Pointwise matrix at (s, t): entry (i, j) = block(i,j)[s, t].
    let point = |m: &KernelMatrix, s: usize, t: usize| -> Array2<f64> {
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = m.block(i, j)[[s, t]];
            }
        }
        out
    };
    // One inverse square root per grid point, shared by both measures.
    let mut inv_sqrts = Vec::with_capacity(g);
    for s in 0..g {
        let c = point(truth, s, s);
        let lam_max = {
            let (values, _) = linalg::sym_eig(&c, 1e-8)?;
            values[0].max(0.0)
        };
        let floor = (INV_SQRT_FLOOR_REL * lam_max).max(f64::MIN_POSITIVE);
        inv_sqrts.push(matrix_inv_sqrt(&c, floor)?);
    }
    let sqrt_n = (n as f64).sqrt();
    let mut re1 = 0.0;
    let mut re2 = 0.0;
    for s in 0..g {
        for t in 0..g {
            let mut d = point(est, s, t);
            d.zip_mut_with(&point(truth, s, t), |x, y| *x -= *y);
            let normalized = inv_sqrts[s].dot(&d).dot(&inv_sqrts[t]);
            let fro = normalized.iter().map(|x| x * x).sum::<f64>().sqrt();
            re1 += fro / sqrt_n;
            if s == t {
                re2 += fro / sqrt_n;
            }
        }
    }
    Ok((re1 / (g * g) as f64, re2 / g as f64))
}

/// N x N matrix of Hilbert-Schmidt norms of the correlation functions.
///
/// Entry (i, j) is `hs(C_ij) / (d_i * d_j)` where the denominators are the
/// diagonal-block HS norms — verbatim from the construction this crate
/// follows, which divides by the norms themselves. With `sqrt_norm` the
/// denominators are their square roots instead, which makes the diagonal
/// entries exactly 1.
pub fn correlation_matrix(c: &KernelMatrix, sqrt_norm: bool) -> Result<Array2<f64>> {
    let n = c.n();
    let mut denom = Vec::with_capacity(n);
    for i in 0..n {
        let d = c.block_hs_norm(i, i);
        if d <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "diagonal block {i} has zero HS norm"
            )));
        }
        denom.push(if sqrt_norm { d.sqrt() } else { d });
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = c.block_hs_norm(i, j) / (denom[i] * denom[j]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Grid;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn flat_matrix(n: usize, g: usize, values: &dyn Fn(usize, usize) -> f64) -> KernelMatrix {
        let grid = Grid::unit(g);
        let mut m = KernelMatrix::zeros(vec![grid; n]);
        for i in 0..n {
            for j in 0..n {
                let block = Array2::from_elem((g, g), values(i, j));
                m.set_block(i, j, &block.view());
            }
        }
        m
    }

    #[test]
    fn identical_inputs_have_zero_errors() {
        let m = flat_matrix(3, 4, &|i, j| (i + j) as f64 * 0.3);
        assert_eq!(ell1_error(&m, &m).unwrap(), 0.0);
        assert_eq!(ell2_error(&m, &m).unwrap(), 0.0);
        assert_eq!(max_error(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn single_block_constant_difference() {
        let a = flat_matrix(1, 21, &|_, _| 2.5);
        let b = flat_matrix(1, 21, &|_, _| 0.5);
        assert_abs_diff_eq!(ell1_error(&a, &b).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ell2_error(&a, &b).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(max_error(&a, &b).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn norm_ordering_invariant() {
        let a = flat_matrix(4, 3, &|i, j| ((3 * i + j) % 5) as f64);
        let b = flat_matrix(4, 3, &|i, j| ((i * j) % 3) as f64 * 0.7);
        let l1 = ell1_error(&a, &b).unwrap();
        let lm = max_error(&a, &b).unwrap();
        assert!(lm <= l1 + 1e-14);
        assert!(l1 <= 4.0 * lm + 1e-14);
    }

    #[test]
    fn error_norms_are_symmetric_in_arguments() {
        let a = flat_matrix(3, 3, &|i, j| (i as f64 - j as f64) * 0.4);
        let b = flat_matrix(3, 3, &|i, j| (i + 2 * j) as f64 * 0.1);
        assert_abs_diff_eq!(
            ell1_error(&a, &b).unwrap(),
            ell1_error(&b, &a).unwrap(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            ell2_error(&a, &b).unwrap(),
            ell2_error(&b, &a).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn inv_sqrt_of_identity() {
        let m = Array2::eye(3);
        let out = matrix_inv_sqrt(&m, 1e-12).unwrap();
        for (a, b) in out.iter().zip(m.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn inv_sqrt_of_diagonal() {
        let m = array![[4.0, 0.0], [0.0, 1.0]];
        let out = matrix_inv_sqrt(&m, 1e-12).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(out[[1, 1]], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out[[0, 1]], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn inv_sqrt_floor_handles_rank_deficiency() {
        // 4 * projector onto (1,1,0)/sqrt(2); other eigenvalues 0 hit the
        // floor and contribute floor^{-1/2} in their eigendirections.
        let m = array![
            [2.0, 2.0, 0.0],
            [2.0, 2.0, 0.0],
            [0.0, 0.0, 0.0]
        ];
        let floor = 1e-6;
        let out = matrix_inv_sqrt(&m, floor).unwrap();
        // In the unclipped direction the action is 4^{-1/2} = 0.5.
        let v = [1.0 / 2.0f64.sqrt(), 1.0 / 2.0f64.sqrt(), 0.0];
        let mut mv = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                mv[r] += out[[r, c]] * v[c];
            }
        }
        for r in 0..3 {
            assert_abs_diff_eq!(mv[r], 0.5 * v[r], epsilon = 1e-8);
        }
        // A clipped direction, e.g. (0,0,1), maps to floor^{-1/2} times itself.
        assert_abs_diff_eq!(out[[2, 2]], floor.powf(-0.5), epsilon = 1e-3);
    }

    #[test]
    fn inv_sqrt_projector_identity() {
        let m = array![[3.0, 1.0], [1.0, 2.0]];
        let out = matrix_inv_sqrt(&m, 1e-12).unwrap();
        let product = out.dot(&m).dot(&out);
        for r in 0..2 {
            for c in 0..2 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(product[[r, c]], want, epsilon = 1e-6);
            }
        }
    }

    fn full_rank_truth() -> KernelMatrix {
        flat_matrix(2, 3, &|i, j| match (i, j) {
            (0, 0) => 2.0,
            (1, 1) => 3.0,
            _ => 0.5,
        })
    }

    #[test]
    fn exact_estimate_has_zero_relative_errors() {
        let truth = full_rank_truth();
        let (re1, re2) = relative_errors(&truth, &truth).unwrap();
        assert_abs_diff_eq!(re1, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(re2, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn doubled_estimate_gives_unit_relative_errors() {
        let truth = full_rank_truth();
        let mut est = truth.clone();
        est.dense_mut().mapv_inplace(|x| 2.0 * x);
        let (re1, re2) = relative_errors(&est, &truth).unwrap();
        assert_abs_diff_eq!(re1, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(re2, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn block_diagonal_correlation_is_diagonal() {
        let m = flat_matrix(3, 4, &|i, j| if i == j { 1.0 + i as f64 } else { 0.0 });
        let corr = correlation_matrix(&m, false).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(corr[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn unit_norm_blocks_give_unit_entries() {
        let m = flat_matrix(2, 4, &|_, _| 1.0);
        let corr = correlation_matrix(&m, false).unwrap();
        for v in corr.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn verbatim_diagonal_is_reciprocal_norm() {
        let m = flat_matrix(2, 4, &|i, j| if i == j { 2.0 } else { 0.5 });
        let corr = correlation_matrix(&m, false).unwrap();
        assert_abs_diff_eq!(corr[[0, 0]], 0.5, epsilon = 1e-12);
        let sqrt = correlation_matrix(&m, true).unwrap();
        assert_abs_diff_eq!(sqrt[[0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_diagonal_block_rejected() {
        let m = flat_matrix(2, 3, &|i, j| if i == 0 && j == 0 { 0.0 } else { 1.0 });
        assert!(correlation_matrix(&m, false).is_err());
    }

    #[test]
    fn correlation_ranking_is_scale_invariant() {
        let m = flat_matrix(3, 3, &|i, j| 1.0 + ((2 * i + j) % 4) as f64 * 0.3);
        let mut scaled = m.clone();
        scaled.dense_mut().mapv_inplace(|x| 5.0 * x);
        let a = correlation_matrix(&m, false).unwrap();
        let b = correlation_matrix(&scaled, false).unwrap();
        // Off-diagonal ordering must agree even though magnitudes differ.
        let mut pairs: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (1, 2)];
        pairs.sort_by(|&(i1, j1), &(i2, j2)| a[[i1, j1]].partial_cmp(&a[[i2, j2]]).unwrap());
        let mut pairs_b = vec![(0, 1), (0, 2), (1, 2)];
        pairs_b.sort_by(|&(i1, j1), &(i2, j2)| b[[i1, j1]].partial_cmp(&b[[i2, j2]]).unwrap());
        assert_eq!(pairs, pairs_b);
    }
}
