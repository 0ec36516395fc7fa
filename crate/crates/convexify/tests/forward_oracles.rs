//! Independent oracles for the forward solver.
//!
//! The production solver discretizes the scattered-field problem with
//! one-sided Robin rows and solves at the working resolution. The checks here
//! rebuild the same continuum problem along two genuinely different routes —
//! a ghost-node discretization on a four-times-finer grid, and a sensitivity
//! ODE for the frequency derivative of the data — and require agreement.

mod common;

use common::{oracle_mismatch, refine4};
use convexify::forward::{fundamental_solution, solve_forward, synth_data, ConductivityProfile};
use convexify::grid::{Grid1D, KGrid};
use nalgebra::{DMatrix, DVector};

#[test]
fn scattered_field_matches_the_fine_ghost_node_solve() {
    let grid = Grid1D::new(1.0, 201).unwrap();
    let fine = refine4(&grid);
    let profiles: Vec<(&str, ConductivityProfile, ConductivityProfile)> = vec![
        ("flat", ConductivityProfile::flat(&grid), ConductivityProfile::flat(&fine)),
        (
            "bump",
            ConductivityProfile::bump(&grid, 0.5, 0.5, 0.2).unwrap(),
            ConductivityProfile::bump(&fine, 0.5, 0.5, 0.2).unwrap(),
        ),
        (
            "two-layer",
            ConductivityProfile::two_layer_smooth(&grid, 0.5, 0.3, 0.7, 0.05).unwrap(),
            ConductivityProfile::two_layer_smooth(&fine, 0.5, 0.3, 0.7, 0.05).unwrap(),
        ),
    ];
    for (name, coarse_p, fine_p) in &profiles {
        for &k in &[1.0, 2.0, 3.0] {
            let err = oracle_mismatch(coarse_p, fine_p, k);
            assert!(
                err <= 1e-4,
                "scattered field for {name} profile at k = {k} is {err:.3e} from the oracle"
            );
        }
    }
}

#[test]
fn oracle_and_solver_converge_to_each_other_at_second_order() {
    // The mismatch is dominated by the coarse solver's own O(h²) error, so
    // doubling the resolution should shrink it about fourfold.
    let mut errs = Vec::new();
    for &n in &[51usize, 101, 201] {
        let grid = Grid1D::new(1.0, n).unwrap();
        let fine = refine4(&grid);
        let coarse_p = ConductivityProfile::bump(&grid, 0.5, 0.5, 0.2).unwrap();
        let fine_p = ConductivityProfile::bump(&fine, 0.5, 0.5, 0.2).unwrap();
        errs.push(oracle_mismatch(&coarse_p, &fine_p, 2.0));
    }
    let order01 = (errs[0] / errs[1]).log2();
    let order12 = (errs[1] / errs[2]).log2();
    assert!(
        (1.7..=2.3).contains(&order01) && (1.7..=2.3).contains(&order12),
        "observed orders {order01:.2}, {order12:.2} from errors {errs:?}"
    );
}

/// d/dk of the data by an independent route: differentiate the boundary
/// value problem itself. With s = ∂ṽ/∂k,
///
///     s'' - kσ s = σ ṽ + (σ-1) u⁰ + k (σ-1) ∂ₖu⁰
///     s'(0) = √k s(0) + ṽ(0)/(2√k)
///     s'(z_max) = -√k s(z_max) - ṽ(z_max)/(2√k)
///
/// and g'(k) = √k s(0) + ṽ(0)/(2√k). ∂ₖu⁰ is closed-form.
fn sensitivity_g_prime(profile: &ConductivityProfile, k: f64) -> f64 {
    let grid = profile.grid();
    let n = grid.len();
    let h = grid.spacing();
    let sk = k.sqrt();
    let sigma = profile.values();
    let v = solve_forward(profile, k).unwrap().v_scattered;

    let du0 = |z: f64| -(-sk * z).exp() * (z / (4.0 * k) + 1.0 / (4.0 * k * sk));

    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    // One-sided rows mirror the production Robin treatment; only the
    // right-hand sides differ from the base problem.
    a[(0, 0)] = -3.0 / (2.0 * h) - sk;
    a[(0, 1)] = 4.0 / (2.0 * h);
    a[(0, 2)] = -1.0 / (2.0 * h);
    rhs[0] = v.values()[0] / (2.0 * sk);
    for i in 1..n - 1 {
        let z = grid.nodes()[i];
        a[(i, i - 1)] = 1.0 / (h * h);
        a[(i, i)] = -2.0 / (h * h) - k * sigma[i];
        a[(i, i + 1)] = 1.0 / (h * h);
        rhs[i] = sigma[i] * v.values()[i]
            + (sigma[i] - 1.0) * (fundamental_solution(z, k).unwrap() + k * du0(z));
    }
    a[(n - 1, n - 3)] = 1.0 / (2.0 * h);
    a[(n - 1, n - 2)] = -4.0 / (2.0 * h);
    a[(n - 1, n - 1)] = 3.0 / (2.0 * h) + sk;
    rhs[n - 1] = -v.values()[n - 1] / (2.0 * sk);

    let s = a.lu().solve(&rhs).expect("sensitivity system is nonsingular");
    sk * s[0] + v.values()[0] / (2.0 * sk)
}

#[test]
fn data_derivative_matches_the_sensitivity_ode() {
    let grid = Grid1D::new(1.0, 201).unwrap();
    let profile = ConductivityProfile::bump(&grid, 0.5, 0.5, 0.2).unwrap();

    // g' from frequency differencing carries an O(Δk²) truncation error;
    // halving Δk must shrink the worst interior mismatch about fourfold.
    let mut errs = Vec::new();
    for &n_k in &[11usize, 21] {
        let kg = KGrid::new(1.0, 3.0, n_k).unwrap();
        let data = synth_data(&profile, &kg).unwrap();
        let mut worst = 0.0f64;
        for (j, &k) in kg.values().iter().enumerate() {
            // Endpoints use one-sided differences with their own constant.
            if j == 0 || j == n_k - 1 {
                continue;
            }
            let oracle = sensitivity_g_prime(&profile, k);
            worst = worst.max((data.g_prime[j] - oracle).abs());
        }
        errs.push(worst);
    }
    let order = (errs[0] / errs[1]).log2();
    assert!(
        (1.6..=2.4).contains(&order),
        "g' differencing error should drop at second order, got {order:.2} from {errs:?}"
    );
    assert!(errs[0] < 1e-3, "g' mismatch {:.3e} too large on the default grid", errs[0]);
}
