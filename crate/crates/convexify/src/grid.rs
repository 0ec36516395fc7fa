//! Uniform grids, finite-difference calculus, and the discrete H² machinery.
//!
//! Everything downstream works on nodal fields over a uniform grid of the
//! slab [0, z_max]. Differentiation is second order: central stencils in the
//! interior, one-sided three-point (first derivative) and four-point (second
//! derivative) stencils at the ends. Integration is the trapezoidal rule.
//!
//! The H² inner product is the discrete analogue of
//!
//! ```text
//! <f, g> = ∫ (f g + f' g' + f'' g'') dz
//! ```
//!
//! with all derivatives taken by the stencils above. Riesz representation on
//! a constrained subspace (fields with pinned value/slope at the ends) is
//! solved by eliminating the constrained degrees of freedom and factoring the
//! reduced Gram matrix once per grid.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid on `[0, z_max]`.
///
/// Cheap to clone (nodes are shared). Two grids compare equal when they have
/// the same extent and node count, which is what every same-grid check needs.
#[derive(Debug, Clone)]
pub struct Grid1D {
    z_max: f64,
    n_nodes: usize,
    spacing: f64,
    nodes: Arc<[f64]>,
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.z_max == other.z_max && self.n_nodes == other.n_nodes
    }
}

impl Grid1D {
    /// Build a uniform grid with `n_nodes` nodes on `[0, z_max]`.
    ///
    /// Requires `z_max > 0` and `n_nodes >= 5` (the four-point end stencils
    /// need five nodes to stay one-sided).
    pub fn new(z_max: f64, n_nodes: usize) -> Result<Self> {
        if !(z_max > 0.0) || !z_max.is_finite() {
            return Err(Error::invalid(format!("z_max must be positive, got {z_max}")));
        }
        if n_nodes < 5 {
            return Err(Error::invalid(format!("need at least 5 nodes, got {n_nodes}")));
        }
        let h = z_max / (n_nodes - 1) as f64;
        let nodes: Arc<[f64]> = (0..n_nodes).map(|i| i as f64 * h).collect();
        Ok(Grid1D { z_max, n_nodes, spacing: h, nodes })
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Trapezoidal quadrature weights: `h/2` at the ends, `h` inside.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.spacing; self.n_nodes];
        w[0] = 0.5 * self.spacing;
        w[self.n_nodes - 1] = 0.5 * self.spacing;
        w
    }
}

/// Uniform frequency grid `k_min = k_1 < ... < k_m = k_max`.
#[derive(Debug, Clone)]
pub struct KGrid {
    k_min: f64,
    k_max: f64,
    n_k: usize,
    values: Arc<[f64]>,
}

impl PartialEq for KGrid {
    fn eq(&self, other: &Self) -> bool {
        self.k_min == other.k_min && self.k_max == other.k_max && self.n_k == other.n_k
    }
}

impl KGrid {
    /// Requires `0 < k_min < k_max` and at least three frequencies (the
    /// one-sided stencils for d/dk need three points).
    pub fn new(k_min: f64, k_max: f64, n_k: usize) -> Result<Self> {
        if !(k_min > 0.0) || !k_min.is_finite() || !k_max.is_finite() {
            return Err(Error::invalid(format!("k_min must be positive, got {k_min}")));
        }
        if !(k_min < k_max) {
            return Err(Error::invalid(format!("need k_min < k_max, got [{k_min}, {k_max}]")));
        }
        if n_k < 3 {
            return Err(Error::invalid(format!("need at least 3 frequencies, got {n_k}")));
        }
        let dk = (k_max - k_min) / (n_k - 1) as f64;
        let values: Arc<[f64]> = (0..n_k).map(|j| k_min + j as f64 * dk).collect();
        Ok(KGrid { k_min, k_max, n_k, values })
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.n_k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.k_max - self.k_min) / (self.n_k - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Nodal values of a function on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid1D,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Field { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&z| f(z)).collect();
        Field { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + c * other`, checking that both live on the same grid.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Result<Field> {
        same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    pub fn scale(&self, c: f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }
}

pub(crate) fn same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(format!(
            "fields live on different grids ({} vs {} nodes, z_max {} vs {})",
            a.grid.len(),
            b.grid.len(),
            a.grid.z_max(),
            b.grid.z_max()
        )));
    }
    Ok(())
}

/// First derivative, second order everywhere.
///
/// End stencils are written in a fixed evaluation order so that they cancel
/// bit-exactly on fields produced by [`ConstrainedSpace::expand`]; see
/// [`trace_slope_left`] and [`trace_slope_right`].
pub fn diff1(f: &Field) -> Field {
    let v = f.values();
    let n = v.len();
    let h2 = 2.0 * f.grid.spacing();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / h2;
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / h2;
    }
    d[n - 1] = ((3.0 * v[n - 1] + v[n - 3]) - 4.0 * v[n - 2]) / h2;
    Field { grid: f.grid.clone(), values: d }
}

/// Second derivative, second order everywhere (four-point end stencils).
pub fn diff2(f: &Field) -> Field {
    let v = f.values();
    let n = v.len();
    let hh = f.grid.spacing() * f.grid.spacing();
    let mut d = vec![0.0; n];
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / hh;
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / hh;
    }
    d[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / hh;
    Field { grid: f.grid.clone(), values: d }
}

/// Trapezoidal quadrature of the product `f * w`.
pub fn quad_weighted(f: &Field, w: &Field) -> Result<f64> {
    same_grid(f, w)?;
    let tw = f.grid.trapezoid_weights();
    Ok(f
        .values()
        .iter()
        .zip(w.values())
        .zip(&tw)
        .map(|((a, b), q)| a * b * q)
        .sum())
}

fn trapezoid_product(grid: &Grid1D, a: &[f64], b: &[f64]) -> f64 {
    let n = grid.len();
    let h = grid.spacing();
    let mut s = 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]);
    for i in 1..n - 1 {
        s += a[i] * b[i];
    }
    s * h
}

/// Discrete H² inner product `∫ (f g + f' g' + f'' g'') dz`.
pub fn h2_inner(f: &Field, g: &Field) -> Result<f64> {
    same_grid(f, g)?;
    let (f1, g1) = (diff1(f), diff1(g));
    let (f2, g2) = (diff2(f), diff2(g));
    let grid = &f.grid;
    Ok(trapezoid_product(grid, f.values(), g.values())
        + trapezoid_product(grid, f1.values(), g1.values())
        + trapezoid_product(grid, f2.values(), g2.values()))
}

/// Discrete H² norm.
pub fn h2_norm(f: &Field) -> f64 {
    h2_inner(f, f).expect("field is on its own grid").sqrt()
}

/// Discrete boundary value at z = 0.
pub fn trace_value_left(f: &Field) -> f64 {
    f.values()[0]
}

/// Discrete slope at z = 0, second-order one-sided stencil.
///
/// Evaluation order is pinned (left to right) so that fields assembled by
/// [`ConstrainedSpace::expand`] produce an exact `0.0` here.
pub fn trace_slope_left(f: &Field) -> f64 {
    let v = f.values();
    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * f.grid.spacing())
}

/// Discrete slope at z = z_max, second-order one-sided stencil.
///
/// The stencil is grouped as `(3 f[n-1] + f[n-3]) - 4 f[n-2]`; together with
/// the matching grouping in [`ConstrainedSpace::expand`] this makes the trace
/// of any expanded field an exact `0.0`, not merely a small number.
pub fn trace_slope_right(f: &Field) -> f64 {
    let v = f.values();
    let n = v.len();
    ((3.0 * v[n - 1] + v[n - 3]) - 4.0 * v[n - 2]) / (2.0 * f.grid.spacing())
}

/// Which nodal degrees of freedom a constrained subspace pins.
///
/// Constraints are the *discrete* trace functionals above, eliminated exactly
/// rather than penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcMask {
    /// `u(0) = u'(0) = 0`: the space the Carleman estimate quantifies over.
    ClampedLeft,
    /// `u(0) = u'(0) = 0` and `u'(z_max) = 0`: same-boundary differences of
    /// candidate fields live here, and the strong-convexity gap is measured
    /// over this space.
    ClampedLeftFlatRight,
    /// `u[0] = u[1] = u[2] = 0` nodally and `u'(z_max) = 0`: the increment
    /// space for descent iterates. Zeroing the whole footprint of both left
    /// trace stencils (not just the two trace functionals) means adding such
    /// an increment to a lift cannot move the lift's left traces even in the
    /// last bit, because every boundary-node addition is `x + 0.0`. Costs one
    /// extra pinned node compared to [`BcMask::ClampedLeftFlatRight`], an
    /// O(h²) restriction colocated with the boundary.
    PinnedLeftFlatRight,
}

impl BcMask {
    pub fn n_constraints(self) -> usize {
        match self {
            BcMask::ClampedLeft => 2,
            BcMask::ClampedLeftFlatRight => 3,
            BcMask::PinnedLeftFlatRight => 4,
        }
    }
}

/// A constrained subspace of nodal fields, parametrized by its free degrees
/// of freedom.
///
/// For [`BcMask::ClampedLeftFlatRight`] the dependent nodes are
///
/// ```text
/// u[0]   = 0
/// u[1]   = u[2] / 4                       (makes the left slope stencil vanish)
/// u[n-2] = (3 u[n-1] + u[n-3]) / 4        (makes the right slope stencil vanish)
/// ```
///
/// Both formulas use only exact floating-point operations relative to the
/// trace stencils, so expanded fields satisfy their constraints bit-exactly.
/// [`BcMask::PinnedLeftFlatRight`] replaces the first two rules with
/// `u[0] = u[1] = u[2] = 0` and keeps the right-end reconstruction.
#[derive(Debug, Clone)]
pub struct ConstrainedSpace {
    grid: Grid1D,
    mask: BcMask,
}

impl ConstrainedSpace {
    pub fn new(grid: &Grid1D, mask: BcMask) -> Self {
        ConstrainedSpace { grid: grid.clone(), mask }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn mask(&self) -> BcMask {
        self.mask
    }

    /// Number of free degrees of freedom.
    pub fn free_len(&self) -> usize {
        self.grid.len() - self.mask.n_constraints()
    }

    /// Indices of the free nodes, in the order `expand`/`restrict` use them.
    fn free_nodes(&self) -> Vec<usize> {
        let n = self.grid.len();
        match self.mask {
            BcMask::ClampedLeft => (2..n).collect(),
            BcMask::ClampedLeftFlatRight => {
                let mut idx: Vec<usize> = (2..=n - 3).collect();
                idx.push(n - 1);
                idx
            }
            BcMask::PinnedLeftFlatRight => {
                let mut idx: Vec<usize> = (3..=n - 3).collect();
                idx.push(n - 1);
                idx
            }
        }
    }

    /// Assemble a full field from free degrees of freedom.
    pub fn expand(&self, free: &[f64]) -> Field {
        assert_eq!(free.len(), self.free_len(), "wrong number of free DOFs");
        let n = self.grid.len();
        let mut u = vec![0.0; n];
        match self.mask {
            BcMask::ClampedLeft => {
                u[2..n].copy_from_slice(free);
                u[1] = u[2] / 4.0;
            }
            BcMask::ClampedLeftFlatRight => {
                u[2..=n - 3].copy_from_slice(&free[..n - 4]);
                u[n - 1] = free[n - 4];
                u[n - 2] = (3.0 * u[n - 1] + u[n - 3]) / 4.0;
                u[1] = u[2] / 4.0;
            }
            BcMask::PinnedLeftFlatRight => {
                u[3..=n - 3].copy_from_slice(&free[..n - 5]);
                u[n - 1] = free[n - 5];
                u[n - 2] = (3.0 * u[n - 1] + u[n - 3]) / 4.0;
            }
        }
        Field { grid: self.grid.clone(), values: u }
    }

    /// Add free-DOF increments to a base field, re-deriving the dependent
    /// right node from the summed values and leaving the pinned left block
    /// byte-identical to the base.
    ///
    /// This is how descent iterates are assembled from a boundary lift: the
    /// left traces of the result equal the base's bit-exactly (the pinned
    /// nodes are copied, never added to), and the right slope trace is
    /// exactly `0.0` for every increment, because the trace stencil's
    /// numerator reuses the very sum the dependent node was built from.
    /// Only meaningful for [`BcMask::PinnedLeftFlatRight`].
    pub fn assemble_on(&self, base: &Field, free: &[f64]) -> Result<Field> {
        if self.mask != BcMask::PinnedLeftFlatRight {
            return Err(Error::invalid(
                "assemble_on is defined only for the pinned-left descent space",
            ));
        }
        if base.grid != self.grid {
            return Err(Error::GridMismatch("assemble_on: base on a different grid".into()));
        }
        assert_eq!(free.len(), self.free_len(), "wrong number of free DOFs");
        let n = self.grid.len();
        let mut u = base.values().to_vec();
        for (j, &i) in self.free_nodes().iter().enumerate() {
            u[i] += free[j];
        }
        u[n - 2] = (3.0 * u[n - 1] + u[n - 3]) / 4.0;
        Ok(Field { grid: self.grid.clone(), values: u })
    }

    /// Extract the free degrees of freedom of a field (dropping whatever its
    /// dependent nodes hold).
    pub fn restrict(&self, f: &Field) -> Result<Vec<f64>> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch("restrict: field on a different grid".into()));
        }
        Ok(self.free_nodes().iter().map(|&i| f.values()[i]).collect())
    }

    /// The constraint functionals evaluated on a field, in the order
    /// value-left, slope-left (, slope-right).
    pub fn constraint_traces(&self, f: &Field) -> Vec<f64> {
        match self.mask {
            BcMask::ClampedLeft => vec![trace_value_left(f), trace_slope_left(f)],
            BcMask::ClampedLeftFlatRight => {
                vec![trace_value_left(f), trace_slope_left(f), trace_slope_right(f)]
            }
            BcMask::PinnedLeftFlatRight => vec![
                trace_value_left(f),
                trace_slope_left(f),
                f.values()[2],
                trace_slope_right(f),
            ],
        }
    }

    /// Whether all constraint functionals vanish within `tol`.
    pub fn contains(&self, f: &Field, tol: f64) -> bool {
        f.grid == self.grid && self.constraint_traces(f).iter().all(|t| t.abs() <= tol)
    }

    /// Dense matrix mapping free DOFs to nodal values (used for Gram-system
    /// reduction; runtime field assembly goes through `expand`).
    fn basis_matrix(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let m = self.free_len();
        let mut nmat = DMatrix::zeros(n, m);
        for (j, &i) in self.free_nodes().iter().enumerate() {
            nmat[(i, j)] = 1.0;
        }
        // Dependent rows mirror `expand`.
        if self.mask != BcMask::PinnedLeftFlatRight {
            nmat[(1, 0)] = 0.25; // u[1] = u[2]/4, and node 2 is the first free DOF
        }
        if self.mask != BcMask::ClampedLeft {
            // u[n-2] = (3 u[n-1] + u[n-3]) / 4; node n-1 is the last free DOF
            // and node n-3 is the one before it.
            nmat[(n - 2, m - 1)] = 0.75;
            nmat[(n - 2, m - 2)] = 0.25;
        }
        nmat
    }
}

fn stencil_matrix_diff1(grid: &Grid1D) -> DMatrix<f64> {
    let n = grid.len();
    let h2 = 2.0 * grid.spacing();
    let mut d = DMatrix::zeros(n, n);
    d[(0, 0)] = -3.0 / h2;
    d[(0, 1)] = 4.0 / h2;
    d[(0, 2)] = -1.0 / h2;
    for i in 1..n - 1 {
        d[(i, i - 1)] = -1.0 / h2;
        d[(i, i + 1)] = 1.0 / h2;
    }
    d[(n - 1, n - 1)] = 3.0 / h2;
    d[(n - 1, n - 2)] = -4.0 / h2;
    d[(n - 1, n - 3)] = 1.0 / h2;
    d
}

fn stencil_matrix_diff2(grid: &Grid1D) -> DMatrix<f64> {
    let n = grid.len();
    let hh = grid.spacing() * grid.spacing();
    let mut d = DMatrix::zeros(n, n);
    d[(0, 0)] = 2.0 / hh;
    d[(0, 1)] = -5.0 / hh;
    d[(0, 2)] = 4.0 / hh;
    d[(0, 3)] = -1.0 / hh;
    for i in 1..n - 1 {
        d[(i, i - 1)] = 1.0 / hh;
        d[(i, i)] = -2.0 / hh;
        d[(i, i + 1)] = 1.0 / hh;
    }
    d[(n - 1, n - 1)] = 2.0 / hh;
    d[(n - 1, n - 2)] = -5.0 / hh;
    d[(n - 1, n - 3)] = 4.0 / hh;
    d[(n - 1, n - 4)] = -1.0 / hh;
    d
}

/// Constrained H² Riesz map: factored once per (grid, mask), then reused for
/// every gradient solve on that grid.
///
/// Solves for `u` in the constrained space such that
/// `h2_inner(u, h) = load · h` for every constrained test field `h`, where
/// `load` is a nodal covector (`load · h = Σ load_i h_i`). The Gram matrix is
/// `G = Q + D1ᵀ Q D1 + D2ᵀ Q D2` (Q = trapezoid weights) reduced onto the
/// free DOFs; the reduction is exact DOF elimination, not a penalty.
#[derive(Debug)]
pub struct RieszMap {
    space: ConstrainedSpace,
    reduced_gram: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    basis: DMatrix<f64>,
}

impl RieszMap {
    pub fn new(grid: &Grid1D, mask: BcMask) -> Result<Self> {
        let space = ConstrainedSpace::new(grid, mask);
        let n = grid.len();
        let q = DMatrix::from_diagonal(&DVector::from_vec(grid.trapezoid_weights()));
        let d1 = stencil_matrix_diff1(grid);
        let d2 = stencil_matrix_diff2(grid);
        let mut gram = q.clone();
        gram += d1.transpose() * (&q * d1);
        gram += d2.transpose() * (&q * d2);
        debug_assert_eq!(gram.nrows(), n);
        let basis = space.basis_matrix();
        let reduced_gram = basis.transpose() * (&gram * &basis);
        let chol = Cholesky::new(reduced_gram.clone())
            .ok_or_else(|| Error::Solver("reduced H² Gram matrix is not SPD".into()))?;
        Ok(RieszMap { space, reduced_gram, chol, basis })
    }

    pub fn space(&self) -> &ConstrainedSpace {
        &self.space
    }

    /// Solve with a nodal load covector (`dJ[h] = Σ load_i h_i`). Returns the
    /// representative's free DOFs and the assembled field.
    ///
    /// One step of iterative refinement keeps the reduced-system residual
    /// near machine precision despite the `h⁻⁴` scaling of the Gram matrix.
    pub fn solve_load(&self, load: &[f64]) -> Result<(Vec<f64>, Field)> {
        let n = self.space.grid().len();
        if load.len() != n {
            return Err(Error::GridMismatch("riesz load has wrong length".into()));
        }
        let b = self.basis.transpose() * DVector::from_column_slice(load);
        let mut y = self.chol.solve(&b);
        for _ in 0..2 {
            let r = &b - &self.reduced_gram * &y;
            y += self.chol.solve(&r);
        }
        let free: Vec<f64> = y.iter().copied().collect();
        let field = self.space.expand(&free);
        Ok((free, field))
    }

    /// Solve with an L² density: `dJ[h] = ∫ density · h dz` (trapezoid).
    pub fn solve_density(&self, density: &Field) -> Result<Field> {
        if density.grid() != self.space.grid() {
            return Err(Error::GridMismatch("riesz density on a different grid".into()));
        }
        let w = self.space.grid().trapezoid_weights();
        let load: Vec<f64> = density.values().iter().zip(&w).map(|(d, q)| d * q).collect();
        Ok(self.solve_load(&load)?.1)
    }

    /// H² norm squared of the representative with free DOFs `free`, computed
    /// through the reduced Gram matrix (consistent with the solve).
    pub fn norm_sq(&self, free: &[f64]) -> f64 {
        let y = DVector::from_column_slice(free);
        (y.transpose() * &self.reduced_gram * y)[(0, 0)]
    }
}

/// One-shot constrained Riesz solve with an L² gradient density; build a
/// [`RieszMap`] directly when solving repeatedly on one grid.
pub fn riesz_h2(l2_grad: &Field, mask: BcMask) -> Result<Field> {
    RieszMap::new(l2_grad.grid(), mask)?.solve_density(l2_grad)
}
