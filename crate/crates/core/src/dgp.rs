//! Simulator for the Monte Carlo data-generating process and the matching
//! closed-form covariance oracles.
//!
//! The panel is built from three independent ingredients: a VAR(1) factor
//! path expanded in a Fourier basis plus a scaled Brownian-bridge
//! perturbation, random loading kernels diagonal in the same basis, and
//! idiosyncratic curves with damped basis coefficients whose cross-subject
//! dependence is banded for the first half of the panel and diagonal for the
//! second. Because everything lives in one basis, the true covariance of
//! every block is available in closed form, which is what the scoring
//! harness measures estimators against.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{FunctionalPanel, Grid, Kernel, KernelMatrix};

/// Default number of grid points per curve.
pub const DEFAULT_GRID_LEN: usize = 21;
/// Default basis size for loadings and idiosyncratic curves.
pub const DEFAULT_N_BASIS: usize = 50;
/// Default VAR warm-up length.
pub const DEFAULT_BURN_IN: usize = 200;
/// Refinement factor for dense-quadrature projections of the bridge.
const REFINE: usize = 10;

/// Simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Number of subjects (must be even: the idiosyncratic dependence
    /// pattern splits the panel at N/2).
    pub n: usize,
    /// Number of time points.
    pub t: usize,
    /// True number of factors.
    pub q: usize,
    /// Grid size on [0, 1].
    pub grid_len: usize,
    /// Basis size.
    pub n_basis: usize,
    /// VAR warm-up steps from the zero state.
    pub burn_in: usize,
    /// Base seed; all streams derive from it deterministically.
    pub seed: u64,
    /// Scale on the idiosyncratic coefficients (test hook; 1 = model value).
    pub idio_scale: f64,
    /// Scale on the Brownian-bridge factor perturbation (test hook).
    pub bridge_scale: f64,
}

impl DgpConfig {
    /// Standard configuration for given panel dimensions and factor count.
    pub fn new(n: usize, t: usize, q: usize, seed: u64) -> Self {
        Self {
            n,
            t,
            q,
            grid_len: DEFAULT_GRID_LEN,
            n_basis: DEFAULT_N_BASIS,
            burn_in: DEFAULT_BURN_IN,
            seed,
            idio_scale: 1.0,
            bridge_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "N must be positive and even, got {}",
                self.n
            )));
        }
        if self.t == 0 {
            return Err(Error::InvalidParameter("T must be positive".into()));
        }
        if self.q == 0 || self.q > self.n_basis {
            return Err(Error::InvalidParameter(format!(
                "q must lie in 1..={}, got {}",
                self.n_basis, self.q
            )));
        }
        if self.grid_len < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 points".into()));
        }
        if !(self.idio_scale >= 0.0 && self.bridge_scale >= 0.0) {
            return Err(Error::InvalidParameter("scales must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything needed to evaluate the true covariances of a simulated panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpTruth {
    /// Loading coefficients, `N x n_basis`.
    pub c: Array2<f64>,
    /// Stationary covariance of the latent VAR, `q x q`.
    pub sigma_g: Array2<f64>,
    /// Idiosyncratic cross-subject weights, `N x N`.
    pub omega: Array2<f64>,
    /// Factor count.
    pub q: usize,
    /// Basis size.
    pub n_basis: usize,
    /// Idiosyncratic scale used in the simulation.
    pub idio_scale: f64,
    /// Bridge scale used in the simulation.
    pub bridge_scale: f64,
}

/// Deterministic per-purpose RNG stream derived from `(seed, label, rep)`.
pub fn stream(seed: u64, label: &str, rep: u64) -> ChaCha12Rng {
    // FNV-1a over the label, then two splitmix64 finalization rounds.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mixed = splitmix64(splitmix64(seed ^ h).wrapping_add(rep));
    ChaCha12Rng::seed_from_u64(mixed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Fourier system `1, sqrt(2) sin(2 pi k u), sqrt(2) cos(2 pi k u), ...`
/// sampled on the grid, one basis function per row.
pub fn fourier_basis(n: usize, grid: &Grid) -> Result<Array2<f64>> {
    if n < 1 {
        return Err(Error::InvalidParameter("basis size must be positive".into()));
    }
    if grid.lo != 0.0 || grid.hi != 1.0 {
        return Err(Error::InvalidGrid("Fourier basis requires the unit interval".into()));
    }
    let g = grid.len();
    let mut basis = Array2::zeros((n, g));
    basis.row_mut(0).fill(1.0);
    let sqrt2 = 2.0f64.sqrt();
    for row in 1..n {
        let k = ((row + 1) / 2) as f64;
        for (col, &u) in grid.points.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * k * u;
            basis[[row, col]] = if row % 2 == 1 {
                sqrt2 * phase.sin()
            } else {
                sqrt2 * phase.cos()
            };
        }
    }
    Ok(basis)
}

/// VAR(1) transition matrix `A_jk = 0.25^{|j-k|+1}`.
pub fn var_transition(q: usize) -> Array2<f64> {
    Array2::from_shape_fn((q, q), |(j, k)| {
        0.25f64.powi((j as i32 - k as i32).abs() + 1)
    })
}

/// Stationary covariance of `G_t = A G_{t-1} + zeta_t`, `zeta ~ N(0, I)`,
/// by fixed-point iteration on `Sigma = A Sigma A^T + I`.
pub fn var_stationary_cov(a: &Array2<f64>) -> Result<Array2<f64>> {
    let q = a.nrows();
    if a.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            actual: a.ncols(),
        });
    }
    let mut sigma = Array2::eye(q);
    for _ in 0..10_000 {
        let next = a.dot(&sigma).dot(&a.t()) + Array2::<f64>::eye(q);
        let delta = (&next - &sigma)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        sigma = next;
        if delta < 1e-12 {
            return Ok(0.5 * (&sigma + &sigma.t()));
        }
    }
    Err(Error::NoConvergence(
        "Lyapunov fixed point did not converge; is the VAR stable?".into(),
    ))
}

/// Idiosyncratic weight matrix: banded `(1 - |j-k|/10)_+` on the first half
/// of the panel, `4 I` on the second half, zero in between.
pub fn omega_matrix(n: usize) -> Result<Array2<f64>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "omega pattern needs even N, got {n}"
        )));
    }
    let half = n / 2;
    Ok(Array2::from_shape_fn((n, n), |(j, k)| {
        if j < half && k < half {
            (1.0 - (j as f64 - k as f64).abs() / 10.0).max(0.0)
        } else if j >= half && k >= half {
            if j == k {
                4.0
            } else {
                0.0
            }
        } else {
            0.0
        }
    }))
}

/// One Brownian-bridge path sampled on the grid (covariance
/// `min(u, v) - uv`), endpoints pinned to zero exactly.
pub fn brownian_bridge(grid: &Grid, rng: &mut impl Rng) -> Vec<f64> {
    // Random walk on the grid times extended to cover [0, 1], then the
    // standard conditioning W(u) - u W(1).
    let mut times: Vec<f64> = Vec::with_capacity(grid.len() + 2);
    if grid.points[0] > 0.0 {
        times.push(0.0);
    }
    times.extend_from_slice(&grid.points);
    if *grid.points.last().unwrap() < 1.0 {
        times.push(1.0);
    }
    let mut walk = Vec::with_capacity(times.len());
    let mut w = 0.0;
    let mut prev = 0.0;
    for &u in &times {
        let du = u - prev;
        if du > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            w += du.sqrt() * z;
        }
        walk.push(w);
        prev = u;
    }
    let w1 = *walk.last().unwrap();
    let offset = times.len() - grid.len() - usize::from(*grid.points.last().unwrap() < 1.0);
    grid.points
        .iter()
        .enumerate()
        .map(|(idx, &u)| {
            if u == 0.0 || u == 1.0 {
                0.0
            } else {
                walk[offset + idx] - u * w1
            }
        })
        .collect()
}

/// Lower-triangular factor of a symmetric PSD matrix, falling back to an
/// eigenvalue square root when the Cholesky factorization fails on a
/// semi-definite input.
fn psd_factor(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |r, c| 0.5 * (m[[r, c]] + m[[c, r]]));
    if let Some(chol) = dm.clone().cholesky() {
        let l = chol.l();
        return Ok(Array2::from_shape_fn((n, n), |(r, c)| l[(r, c)]));
    }
    let (values, vectors) = crate::linalg::sym_eig(m, 1e-8)?;
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let w = values[k].max(0.0).sqrt();
        for r in 0..n {
            out[[r, k]] = w * vectors[[r, k]];
        }
    }
    Ok(out)
}

/// Grid refined `REFINE`-fold (same endpoints) for dense quadrature.
fn refined_unit_grid(grid_len: usize) -> Grid {
    Grid::unit(REFINE * (grid_len - 1) + 1)
}

/// Simulates one panel together with its truth object.
pub fn simulate_panel(cfg: &DgpConfig) -> Result<(FunctionalPanel, DgpTruth)> {
    simulate_panel_rep(cfg, 0)
}

/// Simulates replication `rep`; distinct replications use disjoint RNG
/// streams derived from the same base seed.
pub fn simulate_panel_rep(cfg: &DgpConfig, rep: u64) -> Result<(FunctionalPanel, DgpTruth)> {
    cfg.validate()?;
    let grid = Grid::unit(cfg.grid_len);
    let basis = fourier_basis(cfg.n_basis, &grid)?;

    // Loadings c_{i,j} ~ N(0, 1).
    let mut rng_c = stream(cfg.seed, "loadings", rep);
    let c = Array2::from_shape_fn((cfg.n, cfg.n_basis), |_| rng_c.sample::<f64, _>(StandardNormal));

    // Latent VAR factor path with warm-up from the zero state.
    let a = var_transition(cfg.q);
    let sigma_g = var_stationary_cov(&a)?;
    let mut rng_var = stream(cfg.seed, "var", rep);
    let mut state = Array1::<f64>::zeros(cfg.q);
    for _ in 0..cfg.burn_in {
        state = step_var(&a, &state, &mut rng_var);
    }
    let mut factors = Array2::zeros((cfg.t, cfg.q));
    for t in 0..cfg.t {
        state = step_var(&a, &state, &mut rng_var);
        factors.row_mut(t).assign(&state);
    }

    // Basis coefficients of F_t: the Phi part is exact by orthonormality,
    // the bridge part is projected with dense quadrature on a refined grid.
    let refined = refined_unit_grid(cfg.grid_len);
    let basis_refined = fourier_basis(cfg.n_basis, &refined)?;
    let w_ref = crate::panel::quad_weight(&refined);
    let mut rng_bridge = stream(cfg.seed, "bridge", rep);
    let mut f_coef = Array2::zeros((cfg.t, cfg.n_basis));
    for t in 0..cfg.t {
        for k in 0..cfg.q {
            f_coef[[t, k]] = factors[[t, k]];
        }
        if cfg.bridge_scale > 0.0 {
            let path = brownian_bridge(&refined, &mut rng_bridge);
            let scale = cfg.bridge_scale / cfg.q as f64;
            for l in 0..cfg.n_basis {
                let mut ip = 0.0;
                for (g, &p) in path.iter().enumerate() {
                    ip += basis_refined[[l, g]] * p;
                }
                f_coef[[t, l]] += scale * ip * w_ref;
            }
        }
    }

    // Idiosyncratic coefficients: per basis index l the N-vector is
    // N(0, l^{-2} omega); an extra 1/l damping is applied when the curves
    // are assembled, exactly as the generating formulas prescribe.
    let omega = omega_matrix(cfg.n)?;
    let omega_factor = psd_factor(&omega)?;
    let mut rng_theta = stream(cfg.seed, "theta", rep);
    // theta[t] is an N x n_basis matrix.
    let mut theta: Vec<Array2<f64>> = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        let mut m = Array2::zeros((cfg.n, cfg.n_basis));
        if cfg.idio_scale > 0.0 {
            for l in 0..cfg.n_basis {
                let z = Array1::from_shape_fn(cfg.n, |_| {
                    rng_theta.sample::<f64, _>(StandardNormal)
                });
                let col = omega_factor.dot(&z) * (cfg.idio_scale / (l + 1) as f64);
                m.column_mut(l).assign(&col);
            }
        }
        theta.push(m);
    }

    // Assemble curves: X_it = sum_l c_{i,l} f_coef_{t,l} phi_l
    //                        + sum_l (1/l) theta_{it,l} phi_l.
    let mut values = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut coef = Array2::zeros((cfg.t, cfg.n_basis));
        for t in 0..cfg.t {
            for l in 0..cfg.n_basis {
                coef[[t, l]] =
                    c[[i, l]] * f_coef[[t, l]] + theta[t][[i, l]] / (l + 1) as f64;
            }
        }
        values.push(coef.dot(&basis));
    }
    let panel = FunctionalPanel::new(vec![grid; cfg.n], values, false)?;
    let truth = DgpTruth {
        c,
        sigma_g,
        omega,
        q: cfg.q,
        n_basis: cfg.n_basis,
        idio_scale: cfg.idio_scale,
        bridge_scale: cfg.bridge_scale,
    };
    Ok((panel, truth))
}

fn step_var(a: &Array2<f64>, state: &Array1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let mut next = a.dot(state);
    for v in next.iter_mut() {
        *v += rng.sample::<f64, _>(StandardNormal);
    }
    next
}

/// True idiosyncratic covariance of block (i, j):
/// `omega_ij * sum_l l^{-4} phi_l(u) phi_l(v)` (double damping: `l^{-2}`
/// from the coefficient variance, `l^{-2}` from the assembly factor).
pub fn true_idio_covariance(truth: &DgpTruth, i: usize, j: usize, grid: &Grid) -> Result<Kernel> {
    if i >= truth.omega.nrows() || j >= truth.omega.nrows() {
        return Err(Error::InvalidParameter(format!(
            "subject index out of range: ({i}, {j})"
        )));
    }
    let basis = fourier_basis(truth.n_basis, grid)?;
    let g = grid.len();
    let w = truth.omega[[i, j]] * truth.idio_scale * truth.idio_scale;
    let mut values = Array2::zeros((g, g));
    for l in 0..truth.n_basis {
        let damp = w / ((l + 1) as f64).powi(4);
        if damp == 0.0 {
            continue;
        }
        for s in 0..g {
            for t in 0..g {
                values[[s, t]] += damp * basis[[l, s]] * basis[[l, t]];
            }
        }
    }
    Kernel::new(grid.clone(), grid.clone(), values)
}

/// Basis-projected bridge covariance `M_lm = <phi_l, B phi_m>` with
/// `B(w, z) = min(w, z) - wz`, via dense quadrature on a refined grid.
fn bridge_projection(n_basis: usize, grid_len: usize) -> Result<Array2<f64>> {
    let refined = refined_unit_grid(grid_len);
    let basis = fourier_basis(n_basis, &refined)?;
    let w = crate::panel::quad_weight(&refined);
    let g = refined.len();
    let bridge = Array2::from_shape_fn((g, g), |(s, t)| {
        let (u, v) = (refined.points[s], refined.points[t]);
        u.min(v) - u * v
    });
    Ok(basis.dot(&bridge).dot(&basis.t()) * (w * w))
}

/// True total covariance `C_X = C_chi + C_eps` on a shared grid.
pub fn true_total_covariance(truth: &DgpTruth, grid: &Grid) -> Result<KernelMatrix> {
    let n = truth.omega.nrows();
    let basis = fourier_basis(truth.n_basis, grid)?;
    // Basis-domain covariance of the factor curve coefficients:
    // Sigma_G on the leading q x q block plus the scaled bridge projection.
    let mut s = bridge_projection(truth.n_basis, grid.len())?
        * (truth.bridge_scale * truth.bridge_scale / (truth.q * truth.q) as f64);
    for l in 0..truth.q {
        for m in 0..truth.q {
            s[[l, m]] += truth.sigma_g[[l, m]];
        }
    }
    // Block (i, j) = W_i^T S W_j + omega_ij * E, with W_i = diag(c_i) Phi
    // and E the damped idiosyncratic basis kernel.
    let g = grid.len();
    let mut e = Array2::zeros((g, g));
    let idio2 = truth.idio_scale * truth.idio_scale;
    for l in 0..truth.n_basis {
        let damp = idio2 / ((l + 1) as f64).powi(4);
        for a in 0..g {
            for b in 0..g {
                e[[a, b]] += damp * basis[[l, a]] * basis[[l, b]];
            }
        }
    }
    let w_mats: Vec<Array2<f64>> = (0..n)
        .map(|i| {
            let mut w = basis.clone();
            for l in 0..truth.n_basis {
                let ci = truth.c[[i, l]];
                w.row_mut(l).mapv_inplace(|x| x * ci);
            }
            w
        })
        .collect();
    let sw: Vec<Array2<f64>> = w_mats.iter().map(|w| s.dot(w)).collect();
    let mut out = KernelMatrix::zeros(vec![grid.clone(); n]);
    for i in 0..n {
        for j in i..n {
            let mut block = w_mats[i].t().dot(&sw[j]);
            let om = truth.omega[[i, j]];
            if om != 0.0 {
                block.zip_mut_with(&e, |x, y: &f64| *x += om * y);
            }
            out.set_block(i, j, &block.view());
            if i != j {
                out.set_block(j, i, &block.t());
            }
        }
    }
    Ok(out)
}

/// True common covariance alone (no idiosyncratic part).
pub fn true_common_covariance(truth: &DgpTruth, grid: &Grid) -> Result<KernelMatrix> {
    let mut zeroed = truth.clone();
    zeroed.idio_scale = 0.0;
    true_total_covariance(&zeroed, grid)
}
