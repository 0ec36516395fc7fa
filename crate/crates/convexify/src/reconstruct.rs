//! From minimizing pairs back to a conductivity profile.
//!
//! Each frequency's minimizer `(q, r)` yields the log-field
//! `p = (q − r)/ε`, and the governing equation inverts pointwise to
//!
//! ```text
//! σ(z) = p_zz + k·p_z² − 2√k·p_z + 1.
//! ```
//!
//! Averaging the per-frequency profiles over the band damps the
//! viscosity and noise wobble each single frequency carries. Nothing here
//! clamps the result: the physical bound σ ≥ 1 is a *diagnostic* — nodes
//! that dip below it are flagged and reported, not silently repaired, since
//! they measure how much the data actually constrained the profile.
//!
//! [`invert`] is the full driver: per frequency it builds the boundary set
//! and lift from the data, descends from the lift, and converts the
//! minimizer to a conductivity; frequencies run in parallel.

use rayon::prelude::*;
use serde::Serialize;

use crate::descent::{minimize, probe_gamma, DescentConfig, DescentHistory};
use crate::error::{Error, Result};
use crate::forward::{ConductivityProfile, DataG};
use crate::functional::FunctionalParams;
use crate::grid::{diff1, diff2, h2_norm, quad_weighted, Field, Grid1D, KGrid};
use crate::transform::{boundary_from_data, build_lift, BoundaryMode, FieldPair, TransformChain};

/// The log-field `p = (q − r)/ε` a minimizing pair encodes.
pub fn recover_p(fp: &FieldPair) -> Field {
    fp.p()
}

/// Invert the governing equation for the conductivity at one frequency:
/// `σ = p_zz + k·p_z² − 2√k·p_z + 1`, evaluated nodewise with the standard
/// second-order stencils.
pub fn sigma_of_k(p: &Field, k: f64) -> Result<Field> {
    if !(k > 0.0) {
        return Err(Error::invalid(format!("frequency k = {k} must be positive")));
    }
    let pz = diff1(p);
    let pzz = diff2(p);
    let sqrt_k = k.sqrt();
    let mut sigma = pzz;
    for (s, d) in sigma.values_mut().iter_mut().zip(pz.values()) {
        *s += k * d * d - 2.0 * sqrt_k * d + 1.0;
    }
    Ok(sigma)
}

/// Trapezoid average of per-frequency profiles over the band,
/// `σ_comp = ∫σ(·,k) dk / (k_max − k_min)`. Exact for families that are
/// constant or linear in k.
pub fn sigma_average(sigmas: &[Field], k_grid: &KGrid) -> Result<Field> {
    if sigmas.len() != k_grid.values().len() {
        return Err(Error::invalid(format!(
            "got {} profiles for {} frequencies",
            sigmas.len(),
            k_grid.values().len()
        )));
    }
    let grid = sigmas[0].grid().clone();
    for s in sigmas {
        if *s.grid() != grid {
            return Err(Error::GridMismatch("per-frequency profiles on different grids".into()));
        }
    }
    let m = sigmas.len();
    let dk = k_grid.spacing();
    let band = k_grid.k_max() - k_grid.k_min();
    let mut avg = Field::zeros(&grid);
    for (j, s) in sigmas.iter().enumerate() {
        let w = if j == 0 || j == m - 1 { 0.5 * dk } else { dk };
        avg = avg.add_scaled(w / band, s)?;
    }
    Ok(avg)
}

/// What the physical bound σ ≥ 1 and the frequency spread say about a
/// composite profile.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaDiagnostics {
    /// Node indices where the composite dips below 1.
    pub below_one: Vec<usize>,
    /// Smallest composite value.
    pub min_value: f64,
    /// Nodewise spread `max_k σ(z,k) − min_k σ(z,k)` across the band.
    pub spread: Vec<f64>,
    /// Largest spread over all nodes.
    pub spread_linf: f64,
}

pub fn diagnose_sigma(sigma_comp: &Field, sigma_per_k: &[Field]) -> SigmaDiagnostics {
    let below_one = sigma_comp
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 1.0)
        .map(|(i, _)| i)
        .collect();
    let min_value = sigma_comp.values().iter().copied().fold(f64::INFINITY, f64::min);
    let n = sigma_comp.values().len();
    let mut spread = vec![0.0; n];
    for (i, s) in spread.iter_mut().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for sig in sigma_per_k {
            let v = sig.values()[i];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        *s = if sigma_per_k.is_empty() { 0.0 } else { hi - lo };
    }
    let spread_linf = spread.iter().copied().fold(0.0, f64::max);
    SigmaDiagnostics { below_one, min_value, spread, spread_linf }
}

/// Knobs for a full inversion run, shared across frequencies.
#[derive(Debug, Clone, Serialize)]
pub struct InversionParams {
    /// Carleman weight exponent.
    pub lambda: f64,
    /// Viscosity.
    pub epsilon: f64,
    /// Ball radius; `None` picks `10·max(1, ‖F₁‖ + ‖F₂‖)` per frequency,
    /// wide enough to contain any pair the data plausibly points at.
    pub radius: Option<f64>,
    /// Step size, or the seed for the probe when `probe_gamma` is on.
    pub gamma: f64,
    /// Tune the step per frequency with a doubling/halving probe first.
    pub probe_gamma: bool,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub mode: BoundaryMode,
}

/// The standard benchmark settings, identical to an empty config file's.
impl Default for InversionParams {
    fn default() -> Self {
        InversionParams {
            lambda: 2.0,
            epsilon: 0.1,
            radius: None,
            gamma: 0.1,
            probe_gamma: true,
            max_iters: 300,
            grad_tol: 1e-9,
            mode: BoundaryMode::ForwardConsistent,
        }
    }
}

/// Everything an inversion run produces, one entry per frequency where it
/// applies. The per-frequency profiles are kept alongside the composite so
/// their spread — the honest uncertainty band — is never lost.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub sigma_comp: Field,
    pub sigma_per_k: Vec<Field>,
    pub minimizers: Vec<FieldPair>,
    pub histories: Vec<DescentHistory>,
    pub diagnostics: SigmaDiagnostics,
    pub params: InversionParams,
    /// Noise level carried by the data that produced this result.
    pub data_noise: f64,
}

/// Run the whole inversion: per frequency, boundary set → lift → descent →
/// conductivity, then the band average.
///
/// `reference` is the transform chain of the underlying true medium, needed
/// in two places: the forward-consistent boundary mode reads its traces, and
/// descent histories record distance-to-truth curves from its pairs. Pass
/// `None` for measured data in the closed-form boundary mode.
pub fn invert(
    data: &DataG,
    grid: &Grid1D,
    params: &InversionParams,
    reference: Option<&TransformChain>,
) -> Result<InversionResult> {
    if let Some(chain) = reference {
        if chain.k_grid != data.k_grid {
            return Err(Error::invalid("reference chain and data use different frequency grids"));
        }
        if chain.epsilon != params.epsilon {
            return Err(Error::invalid(format!(
                "reference chain has viscosity {}, inversion wants {}",
                chain.epsilon, params.epsilon
            )));
        }
    }
    if params.mode == BoundaryMode::ForwardConsistent && reference.is_none() {
        return Err(Error::invalid(
            "forward-consistent boundary mode needs the reference chain its traces come from",
        ));
    }
    let ks = data.k_grid.values().to_vec();
    let per_k: Vec<(FieldPair, DescentHistory, Field)> = ks
        .par_iter()
        .enumerate()
        .map(|(j, &k)| -> Result<(FieldPair, DescentHistory, Field)> {
            let b = boundary_from_data(data, k, params.epsilon, params.mode, reference)?;
            let lift = build_lift(&b, grid)?;
            let radius = params
                .radius
                .unwrap_or_else(|| 10.0 * (h2_norm(&lift.f1) + h2_norm(&lift.f2)).max(1.0));
            let fparams = FunctionalParams::new(params.lambda, params.epsilon, k, radius)?;
            let mut cfg = DescentConfig::new(params.gamma, params.max_iters, params.grad_tol, fparams)?;
            let start = FieldPair::new(lift.f1.clone(), lift.f2.clone(), k, params.epsilon)?;
            if params.probe_gamma {
                let gamma = probe_gamma(&start, &lift, &cfg)?;
                cfg = DescentConfig::new(gamma, params.max_iters, params.grad_tol, fparams)?;
            }
            let truth = reference.map(|c| &c.pairs[j]);
            let (minimizer, history) = minimize(&start, &lift, &cfg, truth)?;
            let sigma = sigma_of_k(&recover_p(&minimizer), k)?;
            Ok((minimizer, history, sigma))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut minimizers = Vec::with_capacity(per_k.len());
    let mut histories = Vec::with_capacity(per_k.len());
    let mut sigma_per_k = Vec::with_capacity(per_k.len());
    for (m, h, s) in per_k {
        minimizers.push(m);
        histories.push(h);
        sigma_per_k.push(s);
    }
    let sigma_comp = sigma_average(&sigma_per_k, &data.k_grid)?;
    let diagnostics = diagnose_sigma(&sigma_comp, &sigma_per_k);
    Ok(InversionResult {
        sigma_comp,
        sigma_per_k,
        minimizers,
        histories,
        diagnostics,
        params: params.clone(),
        data_noise: data.noise_level,
    })
}

/// Accuracy summary of an inversion against a known medium.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorMetrics {
    /// Ball-metric distance `‖q − q*‖_{H²} + ‖r − r*‖_{H²}` per frequency.
    pub per_k_pair_error: Vec<f64>,
    /// Relative L² error of the composite conductivity.
    pub sigma_rel_l2: f64,
    /// Largest pointwise composite error.
    pub sigma_linf: f64,
    /// Distance-to-truth per iteration, per frequency — the curves whose
    /// plateau height scales with the data noise (empty when the histories
    /// recorded no truth).
    pub per_iteration: Vec<Vec<f64>>,
}

pub fn error_metrics(
    result: &InversionResult,
    reference: &TransformChain,
    true_profile: &ConductivityProfile,
) -> Result<ErrorMetrics> {
    let mut per_k_pair_error = Vec::with_capacity(result.minimizers.len());
    for (m, t) in result.minimizers.iter().zip(&reference.pairs) {
        let dq = m.q.add_scaled(-1.0, &t.q)?;
        let dr = m.r.add_scaled(-1.0, &t.r)?;
        per_k_pair_error.push(h2_norm(&dq) + h2_norm(&dr));
    }
    let sigma_true = true_profile.as_field();
    let diff = result.sigma_comp.add_scaled(-1.0, &sigma_true)?;
    let grid = diff.grid().clone();
    let diff_sq = {
        let mut d = diff.clone();
        for v in d.values_mut() {
            *v *= *v;
        }
        d
    };
    let true_sq = {
        let mut t = sigma_true.clone();
        for v in t.values_mut() {
            *v *= *v;
        }
        t
    };
    let ones = Field::from_fn(&grid, |_| 1.0);
    let sigma_rel_l2 =
        (quad_weighted(&diff_sq, &ones)? / quad_weighted(&true_sq, &ones)?).sqrt();
    let sigma_linf = diff.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let per_iteration = result
        .histories
        .iter()
        .map(|h| h.distances_to_truth.clone().unwrap_or_default())
        .collect();
    Ok(ErrorMetrics { per_k_pair_error, sigma_rel_l2, sigma_linf, per_iteration })
}
