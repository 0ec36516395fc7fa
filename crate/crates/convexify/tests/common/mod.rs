//! Helpers shared by the integration-test targets.

use convexify::forward::{fundamental_solution, solve_forward, ConductivityProfile};
use convexify::grid::Grid1D;
use nalgebra::{DMatrix, DVector};

/// Brute-force solve of the scattered-field problem on the profile's grid,
/// with the Robin conditions handled by ghost nodes: the centered derivative
/// at each end is set to ±√k times the end value, the ghost value is
/// eliminated from the centered second difference, and the full dense system
/// goes through LU. A genuinely different scheme from the production solver's
/// one-sided Robin rows.
pub fn ghost_node_oracle(profile: &ConductivityProfile, k: f64) -> Vec<f64> {
    let grid = profile.grid();
    let n = grid.len();
    let h = grid.spacing();
    let sk = k.sqrt();
    let sigma = profile.values();

    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let rhs_i = k * (sigma[i] - 1.0) * fundamental_solution(grid.nodes()[i], k).unwrap();
        if i == 0 {
            // Ghost elimination of ṽ'(0) = √k ṽ(0) in the centered row.
            a[(0, 0)] = (-2.0 - 2.0 * h * sk) / (h * h) - k * sigma[0];
            a[(0, 1)] = 2.0 / (h * h);
        } else if i == n - 1 {
            // Ghost elimination of ṽ'(z_max) = -√k ṽ(z_max).
            a[(i, i - 1)] = 2.0 / (h * h);
            a[(i, i)] = (-2.0 - 2.0 * h * sk) / (h * h) - k * sigma[i];
        } else {
            a[(i, i - 1)] = 1.0 / (h * h);
            a[(i, i)] = -2.0 / (h * h) - k * sigma[i];
            a[(i, i + 1)] = 1.0 / (h * h);
        }
        rhs[i] = rhs_i;
    }
    a.lu().solve(&rhs).expect("oracle system is nonsingular").iter().copied().collect()
}

/// Same endpoints, four subintervals per original one.
pub fn refine4(grid: &Grid1D) -> Grid1D {
    Grid1D::new(grid.z_max(), 4 * (grid.len() - 1) + 1).unwrap()
}

/// Relative L2 mismatch between the production scattered field on the coarse
/// grid and the fine-grid oracle restricted to the coarse nodes.
pub fn oracle_mismatch(
    profile: &ConductivityProfile,
    fine_profile: &ConductivityProfile,
    k: f64,
) -> f64 {
    let sol = solve_forward(profile, k).unwrap();
    let fine = ghost_node_oracle(fine_profile, k);
    let coarse = sol.v_scattered.values();
    let h = profile.grid().spacing();
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    for (i, &v) in coarse.iter().enumerate() {
        let w = if i == 0 || i == coarse.len() - 1 { 0.5 * h } else { h };
        let o = fine[4 * i];
        diff2 += w * (v - o) * (v - o);
        ref2 += w * o * o;
    }
    if ref2 > 0.0 {
        (diff2 / ref2).sqrt()
    } else {
        diff2.sqrt()
    }
}
