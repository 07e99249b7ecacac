//! Dense symmetric eigendecomposition helpers shared by the estimation and
//! metric modules.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Full eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; `vectors` holds the matching
/// eigenvectors as columns. Each column is sign-normalized so that its entry
/// of largest magnitude (first such index on ties) is positive, which makes
/// repeated runs reproducible.
pub fn sym_eig(matrix: &Array2<f64>, tol: f64) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: matrix.ncols(),
        });
    }
    let asym = max_asymmetry(matrix);
    if asym > tol {
        return Err(Error::NotSymmetric(asym));
    }
    let m = DMatrix::from_fn(n, n, |r, c| 0.5 * (matrix[[r, c]] + matrix[[c, r]]));
    let eig = m.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = Array2::zeros((n, n));
    for (k, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let mut lead = 0;
        for r in 1..n {
            if col[r].abs() > col[lead].abs() {
                lead = r;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, k]] = sign * col[r];
        }
    }
    Ok((values, vectors))
}

/// Largest absolute difference between a matrix and its transpose.
pub fn max_asymmetry(matrix: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..matrix.nrows() {
        for c in (r + 1)..matrix.ncols() {
            worst = worst.max((matrix[[r, c]] - matrix[[c, r]]).abs());
        }
    }
    worst
}
