//! Discretized functional panels and the quadrature primitives every other
//! module builds on.
//!
//! A curve is stored as its samples on a [`Grid`]; a panel holds one curve per
//! subject per time point. Integrals are discretized with the rectangle rule,
//! so the inner product of two curves on a grid with `G` points over `[lo, hi]`
//! is `sum_s f(u_s) g(u_s) * (hi - lo) / G`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used by the `centered` invariant check.
const CENTER_TOL: f64 = 1e-10;

/// An ordered set of abscissae in a bounded interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Domain lower bound.
    pub lo: f64,
    /// Domain upper bound.
    pub hi: f64,
    /// Strictly increasing sample points, `lo <= points[0]`, `points[last] <= hi`.
    pub points: Vec<f64>,
}

impl Grid {
    /// Builds a grid after validating ordering and bounds.
    pub fn new(lo: f64, hi: f64, points: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidGrid(format!("bad bounds [{lo}, {hi}]")));
        }
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("grid points"));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGrid("points not strictly increasing".into()));
        }
        if points[0] < lo || *points.last().unwrap() > hi {
            return Err(Error::InvalidGrid("points outside bounds".into()));
        }
        Ok(Self { lo, hi, points })
    }

    /// `n` equally spaced points spanning `[lo, hi]` inclusive.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let points = (0..n).map(|i| lo + step * i as f64).collect();
        Self::new(lo, hi, points)
    }

    /// Unit-interval grid with `n` equispaced points, the layout used by the
    /// simulation design.
    pub fn unit(n: usize) -> Self {
        Self::uniform(0.0, 1.0, n).expect("n >= 2")
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the grid holds no points (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rectangle-rule quadrature weight `(hi - lo) / G`.
pub fn quad_weight(grid: &Grid) -> f64 {
    (grid.hi - grid.lo) / grid.len() as f64
}

/// Discrete inner product `integral f g` of two curves sampled on `grid`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    if f.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: f.len(),
        });
    }
    if g.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: g.len(),
        });
    }
    let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(dot * quad_weight(grid))
}

/// A discretized bivariate kernel on the product of two grids.
#[derive(Debug, Clone)]
pub struct Kernel {
    /// Grid for the first argument.
    pub row_grid: Grid,
    /// Grid for the second argument.
    pub col_grid: Grid,
    /// `row_grid.len() x col_grid.len()` samples.
    pub values: Array2<f64>,
}

impl Kernel {
    /// Builds a kernel after validating shapes and finiteness.
    pub fn new(row_grid: Grid, col_grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != row_grid.len() {
            return Err(Error::DimensionMismatch {
                expected: row_grid.len(),
                actual: values.nrows(),
            });
        }
        if values.ncols() != col_grid.len() {
            return Err(Error::DimensionMismatch {
                expected: col_grid.len(),
                actual: values.ncols(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel values"));
        }
        Ok(Self {
            row_grid,
            col_grid,
            values,
        })
    }

    /// Kernel of zeros on the given grid pair.
    pub fn zeros(row_grid: Grid, col_grid: Grid) -> Self {
        let values = Array2::zeros((row_grid.len(), col_grid.len()));
        Self {
            row_grid,
            col_grid,
            values,
        }
    }
}

/// Hilbert-Schmidt norm of a kernel under rectangle-rule quadrature.
pub fn hs_norm(kernel: &Kernel) -> f64 {
    let w = quad_weight(&kernel.row_grid) * quad_weight(&kernel.col_grid);
    (kernel.values.iter().map(|v| v * v).sum::<f64>() * w).sqrt()
}

/// Weighted squared HS norm of a raw block given its grid weights.
pub(crate) fn hs_norm_sq_view(values: &ArrayView2<'_, f64>, w_row: f64, w_col: f64) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() * w_row * w_col
}

/// `N` subjects observed over `T` common time points, each subject sampled on
/// its own grid.
#[derive(Debug, Clone)]
pub struct FunctionalPanel {
    grids: Vec<Grid>,
    /// Per subject: `T x G_i` matrix, row `t` = curve at time `t`.
    values: Vec<Array2<f64>>,
    centered: bool,
}

impl FunctionalPanel {
    /// Builds a panel, validating the shared time length and finiteness.
    pub fn new(grids: Vec<Grid>, values: Vec<Array2<f64>>, centered: bool) -> Result<Self> {
        if grids.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: grids.len(),
                actual: values.len(),
            });
        }
        if grids.is_empty() {
            return Err(Error::InvalidParameter("panel needs at least one subject".into()));
        }
        let t = values[0].nrows();
        for (grid, v) in grids.iter().zip(&values) {
            if v.nrows() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    actual: v.nrows(),
                });
            }
            if v.ncols() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    actual: v.ncols(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("panel values"));
            }
        }
        let panel = Self {
            grids,
            values,
            centered,
        };
        if centered && !panel.check_centered(CENTER_TOL) {
            return Err(Error::InvalidParameter(
                "panel flagged centered but column means exceed tolerance".into(),
            ));
        }
        Ok(panel)
    }

    /// Number of subjects.
    pub fn n_subjects(&self) -> usize {
        self.grids.len()
    }

    /// Number of time points.
    pub fn n_times(&self) -> usize {
        self.values[0].nrows()
    }

    /// Grid of subject `i`.
    pub fn grid(&self, i: usize) -> &Grid {
        &self.grids[i]
    }

    /// All subject grids, in order.
    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    /// `T x G_i` sample matrix of subject `i`.
    pub fn values(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    /// Whether the time mean has been removed.
    pub fn is_centered(&self) -> bool {
        self.centered
    }

    fn check_centered(&self, tol: f64) -> bool {
        self.values.iter().all(|v| {
            v.mean_axis(ndarray::Axis(0))
                .map(|m| m.iter().all(|x| x.abs() <= tol))
                .unwrap_or(false)
        })
    }

    /// Per-subject mean curves over time.
    pub fn mean_curves(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|v| v.mean_axis(ndarray::Axis(0)).unwrap().to_vec())
            .collect()
    }
}

/// Subtracts the time-mean curve from each subject; idempotent.
pub fn center(panel: &FunctionalPanel) -> Result<FunctionalPanel> {
    if panel.n_times() == 0 {
        return Err(Error::InvalidParameter("cannot center an empty panel".into()));
    }
    if panel.centered {
        return Ok(panel.clone());
    }
    let values = panel
        .values
        .iter()
        .map(|v| {
            let mean = v.mean_axis(ndarray::Axis(0)).unwrap();
            v - &mean
        })
        .collect();
    Ok(FunctionalPanel {
        grids: panel.grids.clone(),
        values,
        centered: true,
    })
}

/// `N x N` block matrix of kernels; block `(i, j)` lives on `grid_i x grid_j`.
///
/// Blocks are stored contiguously in one `(sum G_i) x (sum G_j)` matrix so that
/// whole-matrix operations (sample covariances, sums) are single dense passes.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grids: Vec<Grid>,
    offsets: Vec<usize>,
    data: Array2<f64>,
}

impl KernelMatrix {
    /// Zero matrix over the given subject grids.
    pub fn zeros(grids: Vec<Grid>) -> Self {
        let offsets = offsets_of(&grids);
        let total = *offsets.last().unwrap();
        Self {
            grids,
            offsets,
            data: Array2::zeros((total, total)),
        }
    }

    /// Wraps an already-assembled dense block matrix.
    pub fn from_dense(grids: Vec<Grid>, data: Array2<f64>) -> Result<Self> {
        let offsets = offsets_of(&grids);
        let total = *offsets.last().unwrap();
        if data.nrows() != total || data.ncols() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                actual: data.nrows(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel matrix"));
        }
        Ok(Self {
            grids,
            offsets,
            data,
        })
    }

    /// Number of subjects (block rows).
    pub fn n(&self) -> usize {
        self.grids.len()
    }

    /// Subject grids.
    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    /// Start offset of subject `i` within the dense layout.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// The dense `(sum G) x (sum G)` backing matrix.
    pub fn dense(&self) -> &Array2<f64> {
        &self.data
    }

    /// Mutable access to the dense backing matrix.
    pub fn dense_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    /// View of block `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> ArrayView2<'_, f64> {
        let (r0, r1) = (self.offsets[i], self.offsets[i + 1]);
        let (c0, c1) = (self.offsets[j], self.offsets[j + 1]);
        self.data.slice(ndarray::s![r0..r1, c0..c1])
    }

    /// Copies block `(i, j)` out as a standalone [`Kernel`].
    pub fn kernel(&self, i: usize, j: usize) -> Kernel {
        Kernel {
            row_grid: self.grids[i].clone(),
            col_grid: self.grids[j].clone(),
            values: self.block(i, j).to_owned(),
        }
    }

    /// Overwrites block `(i, j)`.
    pub fn set_block(&mut self, i: usize, j: usize, values: &ArrayView2<'_, f64>) {
        let (r0, r1) = (self.offsets[i], self.offsets[i + 1]);
        let (c0, c1) = (self.offsets[j], self.offsets[j + 1]);
        self.data
            .slice_mut(ndarray::s![r0..r1, c0..c1])
            .assign(values);
    }

    /// HS norm of block `(i, j)` under the blocks' quadrature weights.
    pub fn block_hs_norm(&self, i: usize, j: usize) -> f64 {
        let w = quad_weight(&self.grids[i]) * quad_weight(&self.grids[j]);
        hs_norm_sq_view(&self.block(i, j), 1.0, 1.0).sqrt() * w.sqrt()
    }

    /// Largest deviation from block-transpose symmetry.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(self.data.t().iter()) {
            worst = worst.max((a - b).abs());
        }
        worst
    }

    /// Blockwise sum with another kernel matrix of identical layout.
    pub fn add(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        if self.grids != other.grids {
            return Err(Error::InvalidParameter(
                "kernel matrices live on different grids".into(),
            ));
        }
        Ok(KernelMatrix {
            grids: self.grids.clone(),
            offsets: self.offsets.clone(),
            data: &self.data + &other.data,
        })
    }
}

fn offsets_of(grids: &[Grid]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(grids.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for g in grids {
        acc += g.len();
        offsets.push(acc);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn quad_weight_matches_convention() {
        let g = Grid::unit(21);
        assert_abs_diff_eq!(quad_weight(&g), 1.0 / 21.0, epsilon = 1e-15);
        let g2 = Grid::uniform(0.0, 2.0, 2).unwrap();
        assert_abs_diff_eq!(quad_weight(&g2), 1.0, epsilon = 1e-15);
        let g78 = Grid::unit(78);
        assert_abs_diff_eq!(quad_weight(&g78), 1.0 / 78.0, epsilon = 1e-15);
    }

    #[test]
    fn inner_product_of_constants() {
        let g = Grid::unit(21);
        let ones = vec![1.0; 21];
        assert_abs_diff_eq!(inner_product(&ones, &ones, &g).unwrap(), 1.0, epsilon = 1e-12);
        let zeros = vec![0.0; 21];
        assert_abs_diff_eq!(inner_product(&zeros, &ones, &g).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_rejects_length_mismatch() {
        let g = Grid::unit(21);
        assert!(inner_product(&[1.0; 20], &[1.0; 21], &g).is_err());
    }

    #[test]
    fn hs_norm_of_flat_and_bridge_kernels() {
        let g = Grid::unit(21);
        let flat = Kernel::new(g.clone(), g.clone(), Array2::ones((21, 21))).unwrap();
        assert_abs_diff_eq!(hs_norm(&flat), 1.0, epsilon = 1e-12);

        let zero = Kernel::zeros(g.clone(), g);
        assert_eq!(hs_norm(&zero), 0.0);

        // k(u, v) = min(u, v) - uv has squared HS norm 1/90 on [0,1]^2.
        let g = Grid::unit(201);
        let mut values = Array2::zeros((201, 201));
        for (s, &u) in g.points.iter().enumerate() {
            for (t, &v) in g.points.iter().enumerate() {
                values[[s, t]] = u.min(v) - u * v;
            }
        }
        let k = Kernel::new(g.clone(), g, values).unwrap();
        assert_abs_diff_eq!(hs_norm(&k), (1.0f64 / 90.0).sqrt(), epsilon = 1e-3);
    }

    #[test]
    fn center_small_panel() {
        let g = Grid::uniform(0.0, 1.0, 2).unwrap();
        let panel = FunctionalPanel::new(
            vec![g],
            vec![array![[1.0, 3.0], [3.0, 5.0]]],
            false,
        )
        .unwrap();
        let c = center(&panel).unwrap();
        assert_eq!(c.values(0), &array![[-1.0, -1.0], [1.0, 1.0]]);
        assert!(c.is_centered());
        // idempotent
        let c2 = center(&c).unwrap();
        assert_eq!(c.values(0), c2.values(0));
    }

    #[test]
    fn center_constant_curves_to_zero() {
        let g = Grid::unit(5);
        let v = Array2::from_elem((4, 5), 3.25);
        let panel = FunctionalPanel::new(vec![g], vec![v], false).unwrap();
        let c = center(&panel).unwrap();
        assert!(c.values(0).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn grid_rejects_unordered_points() {
        assert!(Grid::new(0.0, 1.0, vec![0.0, 0.5, 0.4]).is_err());
        assert!(Grid::new(0.0, 1.0, vec![0.5]).is_err());
        assert!(Grid::new(0.0, 1.0, vec![-0.1, 0.5]).is_err());
    }

    #[test]
    fn panel_rejects_non_finite() {
        let g = Grid::unit(2);
        let v = array![[f64::NAN, 0.0]];
        assert!(FunctionalPanel::new(vec![g], vec![v], false).is_err());
    }

    #[test]
    fn kernel_matrix_blocks_round_trip() {
        let grids = vec![Grid::unit(3), Grid::unit(4)];
        let mut km = KernelMatrix::zeros(grids);
        let block = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        km.set_block(0, 1, &block.view());
        assert_eq!(km.block(0, 1), block);
        let k = km.kernel(0, 1);
        assert_eq!(k.values, block);
        assert_eq!(k.row_grid.len(), 3);
        assert_eq!(k.col_grid.len(), 4);
    }
}
