//! Forward model: the slab boundary-value problem and boundary data.
//!
//! The total field v(z, k) for a unit point source at the surface satisfies
//!
//! ```text
//! v'' - k σ(z) v = -δ(z),   σ = 1 outside (0, z_max),  σ ≥ 1 inside,
//! ```
//!
//! with v bounded at ±∞. Splitting off the free-space fundamental solution
//! u⁰(z, k) = exp(-√k |z|) / (2√k) leaves the scattered field ṽ = v - u⁰ on
//! the slab with exact radiation conditions folded into Robin rows:
//!
//! ```text
//! ṽ'' - k σ ṽ = k (σ - 1) u⁰      on (0, z_max)
//! ṽ'(0) = √k ṽ(0),   ṽ'(z_max) = -√k ṽ(z_max)
//! ```
//!
//! The measured data is g(k) = v'(0⁺, k) = -1/2 + √k ṽ(0, k); for a uniform
//! halfspace (σ ≡ 1) it is exactly -1/2 for every k.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{diff1, Field, Grid1D, KGrid};

/// Free-space fundamental solution `u⁰(z, k) = exp(-√k |z|) / (2√k)`.
pub fn fundamental_solution(z: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!("fundamental solution needs k > 0, got {k}")));
    }
    let sk = k.sqrt();
    Ok((-sk * z.abs()).exp() / (2.0 * sk))
}

/// d/dz of the fundamental solution on the ground side (z ≥ 0 branch):
/// `-√k u⁰(z, k)`; at z = 0 this is the one-sided limit -1/2 for every k.
pub fn fundamental_solution_dz(z: f64, k: f64) -> Result<f64> {
    if z < 0.0 {
        return Err(Error::invalid("ground-side derivative needs z >= 0"));
    }
    Ok(-k.sqrt() * fundamental_solution(z, k)?)
}

/// A conductivity profile on the slab grid: σ ≥ 1 at every node and exactly
/// 1 at both endpoints (matching the uniform exterior).
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityProfile {
    grid: Grid1D,
    values: Vec<f64>,
}

/// Subtract the linear blend of a shape's endpoint values so the result
/// vanishes at both ends of the grid.
fn taper_to_zero(grid: &Grid1D, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let z_max = grid.z_max();
    let (s0, s1) = (shape(0.0), shape(z_max));
    grid.nodes()
        .iter()
        .map(|&z| {
            let t = z / z_max;
            shape(z) - (s0 * (1.0 - t) + s1 * t)
        })
        .collect()
}

impl ConductivityProfile {
    /// Validate nodal values: σ ≥ 1 everywhere, σ = 1 exactly at the ends.
    pub fn from_values(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "profile has {} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 1.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("conductivity must satisfy σ >= 1, got {bad}")));
        }
        if values[0] != 1.0 || values[grid.len() - 1] != 1.0 {
            return Err(Error::invalid(
                "conductivity must equal 1 exactly at both slab boundaries",
            ));
        }
        Ok(ConductivityProfile { grid, values })
    }

    /// Uniform halfspace: σ ≡ 1.
    pub fn flat(grid: &Grid1D) -> Self {
        ConductivityProfile { grid: grid.clone(), values: vec![1.0; grid.len()] }
    }

    /// Gaussian bump `1 + a exp(-((z-c)/s)²)`, tapered so the endpoints are
    /// exactly 1. The taper subtracts the linear blend of the Gaussian's
    /// endpoint values; for bumps centered inside the slab the result stays
    /// nonnegative, and a last-ulp floor absorbs rounding dust.
    pub fn bump(grid: &Grid1D, amplitude: f64, center: f64, width: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !(width > 0.0) {
            return Err(Error::invalid(format!(
                "bump needs amplitude >= 0 and width > 0, got a={amplitude}, s={width}"
            )));
        }
        let shape = |z: f64| amplitude * (-((z - center) / width).powi(2)).exp();
        Self::from_tapered_shape(grid, shape)
    }

    /// Smoothed two-layer medium: conductivity rises from 1 to `1 + a`
    /// across `depth_top` and returns to 1 across `depth_bottom`, with tanh
    /// transitions of scale `sharpness`, tapered so the endpoints are exactly 1.
    pub fn two_layer_smooth(
        grid: &Grid1D,
        amplitude: f64,
        depth_top: f64,
        depth_bottom: f64,
        sharpness: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0) || !(sharpness > 0.0) || !(depth_top < depth_bottom) {
            return Err(Error::invalid(format!(
                "two-layer profile needs amplitude >= 0, sharpness > 0, depth_top < depth_bottom \
                 (got a={amplitude}, s={sharpness}, [{depth_top}, {depth_bottom}])"
            )));
        }
        let shape = |z: f64| {
            0.5 * amplitude
                * (((z - depth_top) / sharpness).tanh() - ((z - depth_bottom) / sharpness).tanh())
        };
        Self::from_tapered_shape(grid, shape)
    }

    fn from_tapered_shape(grid: &Grid1D, shape: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid.len();
        let mut values: Vec<f64> = taper_to_zero(grid, shape)
            .into_iter()
            // The taper is nonnegative by construction up to rounding; the
            // floor only absorbs that dust and the constructor re-validates.
            .map(|d| (1.0 + d).max(1.0))
            .collect();
        values[0] = 1.0;
        values[n - 1] = 1.0;
        Self::from_values(grid.clone(), values)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_field(&self) -> Field {
        Field::new(self.grid.clone(), self.values.clone()).expect("profile matches its grid")
    }
}

/// Forward solve at one frequency.
#[derive(Debug, Clone)]
pub struct ForwardSolutionK {
    pub k: f64,
    /// Scattered field ṽ on the slab.
    pub v_scattered: Field,
    /// Total field v = u⁰ + ṽ.
    pub v_total: Field,
    /// Normalized total field w = v / u⁰ (strictly positive).
    pub w: Field,
    /// Log-field p = ln(w) / k.
    pub p: Field,
}

/// Forward solves for a whole frequency grid, in `KGrid` order.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub k_grid: KGrid,
    pub per_k: Vec<ForwardSolutionK>,
}

/// Solve the scattered-field boundary value problem at one frequency.
///
/// Second-order finite differences with the Robin conditions discretized by
/// the same one-sided stencils the rest of the crate uses; the dense system
/// is solved by LU with partial pivoting.
pub fn solve_forward(profile: &ConductivityProfile, k: f64) -> Result<ForwardSolutionK> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!("forward solve needs k > 0, got {k}")));
    }
    let grid = profile.grid();
    let n = grid.len();
    let h = grid.spacing();
    let sk = k.sqrt();
    let sigma = profile.values();

    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    // Robin row at z = 0: ṽ'(0) - √k ṽ(0) = 0.
    a[(0, 0)] = -3.0 / (2.0 * h) - sk;
    a[(0, 1)] = 4.0 / (2.0 * h);
    a[(0, 2)] = -1.0 / (2.0 * h);
    for i in 1..n - 1 {
        a[(i, i - 1)] = 1.0 / (h * h);
        a[(i, i)] = -2.0 / (h * h) - k * sigma[i];
        a[(i, i + 1)] = 1.0 / (h * h);
        rhs[i] = k * (sigma[i] - 1.0) * fundamental_solution(grid.nodes()[i], k)?;
    }
    // Robin row at z = z_max: ṽ'(z_max) + √k ṽ(z_max) = 0.
    a[(n - 1, n - 3)] = 1.0 / (2.0 * h);
    a[(n - 1, n - 2)] = -4.0 / (2.0 * h);
    a[(n - 1, n - 1)] = 3.0 / (2.0 * h) + sk;

    let lu = a.lu();
    let v_scattered = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solver(format!("forward system singular at k = {k}")))?;
    let v_scattered = Field::new(grid.clone(), v_scattered.iter().copied().collect())?;
    finish_solution(grid, k, v_scattered)
}

/// Build v, w, p from a scattered field (shared by the production solver and
/// by any alternative solve path).
pub(crate) fn finish_solution(
    grid: &Grid1D,
    k: f64,
    v_scattered: Field,
) -> Result<ForwardSolutionK> {
    let mut v_total = vec![0.0; grid.len()];
    let mut w = vec![0.0; grid.len()];
    for (i, &z) in grid.nodes().iter().enumerate() {
        let u0 = fundamental_solution(z, k)?;
        let vs = v_scattered.values()[i];
        v_total[i] = u0 + vs;
        // w = 1 + ṽ/u⁰ avoids the cancellation of v/u⁰ at depth.
        w[i] = 1.0 + vs / u0;
    }
    let w = Field::new(grid.clone(), w)?;
    // Rejects nonpositive w before taking the logarithm.
    let p = crate::transform::compute_p(&w, k)?;
    Ok(ForwardSolutionK {
        k,
        v_scattered,
        v_total: Field::new(grid.clone(), v_total)?,
        w,
        p,
    })
}

/// Solve the forward problem for every frequency of a grid.
pub fn solve_forward_family(profile: &ConductivityProfile, kg: &KGrid) -> Result<ForwardSolution> {
    use rayon::prelude::*;
    let per_k: Result<Vec<ForwardSolutionK>> = kg
        .values()
        .par_iter()
        .map(|&k| solve_forward(profile, k))
        .collect();
    Ok(ForwardSolution { k_grid: kg.clone(), per_k: per_k? })
}

/// Boundary data: g(k) = v'(0⁺, k) and its frequency derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct DataG {
    pub k_grid: KGrid,
    pub g: Vec<f64>,
    pub g_prime: Vec<f64>,
    /// Relative noise level the data carries (0 for synthetic clean data).
    pub noise_level: f64,
}

/// Second-order d/dk of a series sampled on a uniform frequency grid.
pub fn diffk(series: &[f64], kg: &KGrid) -> Result<Vec<f64>> {
    let m = kg.len();
    if series.len() != m {
        return Err(Error::GridMismatch(format!(
            "series has {} entries for a {}-frequency grid",
            series.len(),
            m
        )));
    }
    let dk2 = 2.0 * kg.spacing();
    let mut d = vec![0.0; m];
    d[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / dk2;
    for j in 1..m - 1 {
        d[j] = (series[j + 1] - series[j - 1]) / dk2;
    }
    d[m - 1] = (3.0 * series[m - 1] - 4.0 * series[m - 2] + series[m - 3]) / dk2;
    Ok(d)
}

/// Synthesize clean boundary data from a known profile.
///
/// g(k) = -1/2 + √k ṽ(0, k); the Robin row makes this identical to reading
/// the one-sided derivative stencil at the surface. g'(k) is formed by
/// second-order differences across the frequency grid.
pub fn synth_data(profile: &ConductivityProfile, kg: &KGrid) -> Result<DataG> {
    let family = solve_forward_family(profile, kg)?;
    data_from_solution(&family)
}

/// Boundary data read off an already-computed forward family.
pub fn data_from_solution(family: &ForwardSolution) -> Result<DataG> {
    let g: Vec<f64> = family
        .per_k
        .iter()
        .map(|s| -0.5 + s.k.sqrt() * s.v_scattered.values()[0])
        .collect();
    let g_prime = diffk(&g, &family.k_grid)?;
    Ok(DataG { k_grid: family.k_grid.clone(), g, g_prime, noise_level: 0.0 })
}

/// Multiplicative uniform noise: g̃(k) = g(k) (1 + δ ξ_k) with ξ_k drawn
/// i.i.d. from U[-1, 1] by a seeded generator; g̃' is re-differenced from
/// the noisy values (measured data has no clean derivative).
pub fn add_noise(data: &DataG, delta: f64, seed: u64) -> Result<DataG> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("noise level must be in [0, 1), got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = data
        .g
        .iter()
        .map(|gk| gk * (1.0 + delta * rng.random_range(-1.0..=1.0)))
        .collect();
    let g_prime = diffk(&g, &data.k_grid)?;
    Ok(DataG { k_grid: data.k_grid.clone(), g, g_prime, noise_level: delta })
}

/// Residuals of the discrete Robin conditions for a scattered field; used by
/// tests to confirm the solver enforces them to solver precision.
pub fn robin_residuals(sol: &ForwardSolutionK) -> (f64, f64) {
    let d = diff1(&sol.v_scattered);
    let v = sol.v_scattered.values();
    let n = v.len();
    let sk = sol.k.sqrt();
    (d.values()[0] - sk * v[0], d.values()[n - 1] + sk * v[n - 1])
}
