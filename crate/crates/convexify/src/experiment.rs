//! Experiment orchestration: configuration files, the four command drivers
//! (`forward`, `invert`, `verify`, `sweep`), and persistence.
//!
//! Configuration is a flat key-value TOML file; unknown keys are rejected
//! outright so a typo can't silently fall back to a default. Every numeric
//! result file is delimited text whose first line names its columns, and the
//! resolved parameters of a run land in `manifest.json` next to the tables.
//! Re-running the same config and seed reproduces the numeric files byte for
//! byte: all randomness flows from the seed through counter-based
//! generators, and per-frequency work is collected in frequency order no
//! matter how it was scheduled.
//!
//! A full config with every key spelled out (all of them optional — the
//! defaults reproduce the standard benchmark):
//!
//! ```toml
//! profile = "bump"             # flat | bump | two-layer-smooth | file
//! profile_amplitude = 0.5
//! profile_center = 0.5         # bump only
//! profile_width = 0.2          # bump only
//! profile_depth_top = 0.3      # two-layer-smooth only
//! profile_depth_bottom = 0.7   # two-layer-smooth only
//! profile_sharpness = 0.05     # two-layer-smooth only
//! # profile_path = "sigma.csv" # profile = "file": table with header z,sigma
//!
//! z_max = 1.0
//! n_nodes = 201
//! k_min = 1.0
//! k_max = 3.0
//! n_k = 11
//!
//! epsilon = 0.1
//! lambda = 2.0
//! # radius = 25.0              # omit for the automatic per-frequency choice
//! gamma = 0.1
//! probe_gamma = true
//! max_iters = 300
//! grad_tol = 1e-9
//! delta = 0.0                  # relative data noise
//! boundary_mode = "forward-consistent"   # or "paper-literal"
//!
//! seed = 1
//! samples = 100                # Monte-Carlo samples per λ in `verify`
//! threads = 0                  # 0 = one worker per core
//! out_dir = "out"
//!
//! lambda_sweep = [1.0, 2.0, 3.0, 5.0, 8.0]
//! # delta_sweep = [0.0, 0.003, 0.01, 0.03]
//! # epsilon_sweep = [0.05, 0.1, 0.2]
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{add_noise, ConductivityProfile, DataG};
use crate::grid::{h2_norm, Grid1D, KGrid};
use crate::reconstruct::{error_metrics, invert, ErrorMetrics, InversionParams, InversionResult};
use crate::transform::{BoundaryMode, TransformChain};
use crate::verify::{
    fit_carleman, fit_convexity, gradient_check_table, VerifySettings, CARLEMAN_LAMBDAS,
    DEFAULT_LAMBDA_SWEEP,
};

fn d_profile() -> String {
    "bump".to_string()
}
fn d_amplitude() -> f64 {
    0.5
}
fn d_center() -> f64 {
    0.5
}
fn d_width() -> f64 {
    0.2
}
fn d_depth_top() -> f64 {
    0.3
}
fn d_depth_bottom() -> f64 {
    0.7
}
fn d_sharpness() -> f64 {
    0.05
}
fn d_z_max() -> f64 {
    1.0
}
fn d_n_nodes() -> usize {
    201
}
fn d_k_min() -> f64 {
    1.0
}
fn d_k_max() -> f64 {
    3.0
}
fn d_n_k() -> usize {
    11
}
fn d_epsilon() -> f64 {
    0.1
}
fn d_lambda() -> f64 {
    2.0
}
fn d_gamma() -> f64 {
    0.1
}
fn d_true() -> bool {
    true
}
fn d_max_iters() -> usize {
    300
}
fn d_grad_tol() -> f64 {
    1e-9
}
fn d_mode() -> BoundaryMode {
    BoundaryMode::ForwardConsistent
}
fn d_seed() -> u64 {
    1
}
fn d_samples() -> usize {
    100
}
fn d_out_dir() -> String {
    "out".to_string()
}
fn d_lambda_sweep() -> Vec<f64> {
    DEFAULT_LAMBDA_SWEEP.to_vec()
}

/// Every knob an experiment run reads, with the defaults spelled out in the
/// module docs. Unknown keys in the file are a hard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_profile")]
    pub profile: String,
    #[serde(default = "d_amplitude")]
    pub profile_amplitude: f64,
    #[serde(default = "d_center")]
    pub profile_center: f64,
    #[serde(default = "d_width")]
    pub profile_width: f64,
    #[serde(default = "d_depth_top")]
    pub profile_depth_top: f64,
    #[serde(default = "d_depth_bottom")]
    pub profile_depth_bottom: f64,
    #[serde(default = "d_sharpness")]
    pub profile_sharpness: f64,
    #[serde(default)]
    pub profile_path: Option<String>,

    #[serde(default = "d_z_max")]
    pub z_max: f64,
    #[serde(default = "d_n_nodes")]
    pub n_nodes: usize,
    #[serde(default = "d_k_min")]
    pub k_min: f64,
    #[serde(default = "d_k_max")]
    pub k_max: f64,
    #[serde(default = "d_n_k")]
    pub n_k: usize,

    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_true")]
    pub probe_gamma: bool,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "d_mode")]
    pub boundary_mode: BoundaryMode,

    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "d_out_dir")]
    pub out_dir: String,

    #[serde(default = "d_lambda_sweep")]
    pub lambda_sweep: Vec<f64>,
    #[serde(default)]
    pub delta_sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon_sweep: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // An empty document exercises every serde default.
        toml::from_str("").expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Cross-field checks the type system can't express. Module-level
    /// invariants (grid sizes, positivity) are re-checked by the
    /// constructors they feed; this catches them early with the key name.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("{key}: {why}")));
        if !(self.z_max > 0.0) {
            return bad("z_max", format!("must be positive, got {}", self.z_max));
        }
        if self.n_nodes < 7 {
            return bad("n_nodes", format!("need at least 7 nodes, got {}", self.n_nodes));
        }
        if !(self.k_min > 0.0 && self.k_max > self.k_min) {
            return bad("k_min/k_max", format!("need 0 < k_min < k_max, got [{}, {}]", self.k_min, self.k_max));
        }
        if self.n_k < 2 {
            return bad("n_k", format!("need at least 2 frequencies, got {}", self.n_k));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if !(self.lambda >= 1.0) {
            return bad("lambda", format!("must be at least 1, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".to_string());
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol", format!("must be positive, got {}", self.grad_tol));
        }
        if !(self.delta >= 0.0) {
            return bad("delta", format!("must be nonnegative, got {}", self.delta));
        }
        if self.samples == 0 {
            return bad("samples", "must be at least 1".to_string());
        }
        if self.lambda_sweep.is_empty() || self.lambda_sweep.iter().any(|l| *l < 1.0) {
            return bad("lambda_sweep", "must be nonempty with every λ at least 1".to_string());
        }
        match self.profile.as_str() {
            "flat" | "bump" | "two-layer-smooth" => {}
            "file" => {
                if self.profile_path.is_none() {
                    return bad("profile_path", "required when profile = \"file\"".to_string());
                }
            }
            other => {
                return bad(
                    "profile",
                    format!("unknown profile \"{other}\" (flat, bump, two-layer-smooth, file)"),
                )
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.z_max, self.n_nodes)
    }

    pub fn k_grid(&self) -> Result<KGrid> {
        KGrid::new(self.k_min, self.k_max, self.n_k)
    }

    pub fn profile(&self, grid: &Grid1D) -> Result<ConductivityProfile> {
        match self.profile.as_str() {
            "flat" => Ok(ConductivityProfile::flat(grid)),
            "bump" => ConductivityProfile::bump(
                grid,
                self.profile_amplitude,
                self.profile_center,
                self.profile_width,
            ),
            "two-layer-smooth" => ConductivityProfile::two_layer_smooth(
                grid,
                self.profile_amplitude,
                self.profile_depth_top,
                self.profile_depth_bottom,
                self.profile_sharpness,
            ),
            "file" => {
                let path = self.profile_path.as_ref().expect("validated");
                read_profile_table(Path::new(path), grid)
            }
            other => Err(Error::Config(format!("unknown profile \"{other}\""))),
        }
    }

    pub fn inversion_params(&self) -> InversionParams {
        InversionParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
            radius: self.radius,
            gamma: self.gamma,
            probe_gamma: self.probe_gamma,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            mode: self.boundary_mode,
        }
    }
}

/// Read a conductivity from a `z,sigma` table. The z column must match the
/// run's grid nodes — resampling someone's profile silently would change
/// the problem being solved.
fn read_profile_table(path: &Path, grid: &Grid1D) -> Result<ConductivityProfile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read profile {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "z,sigma" => {}
        other => {
            return Err(Error::Config(format!(
                "profile table must start with the header \"z,sigma\", found {other:?}"
            )))
        }
    }
    let mut zs = Vec::new();
    let mut sigmas = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("profile line {}: bad row {line:?}", i + 2)))
        };
        zs.push(parse(parts.next())?);
        sigmas.push(parse(parts.next())?);
    }
    if zs.len() != grid.len() {
        return Err(Error::Config(format!(
            "profile has {} rows but the grid has {} nodes",
            zs.len(),
            grid.len()
        )));
    }
    for (a, b) in zs.iter().zip(grid.nodes()) {
        if (a - b).abs() > 1e-9 * grid.z_max() {
            return Err(Error::Config(format!(
                "profile z column does not match the grid (found {a}, expected {b})"
            )));
        }
    }
    ConductivityProfile::from_values(grid.clone(), sigmas)
}

/// Write a delimited table: one header line naming the columns, then rows.
fn write_table<I: IntoIterator<Item = String>>(path: &Path, header: &str, rows: I) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
}

/// Record the verb, the fully resolved config, and the produced files.
fn write_manifest(cfg: &ExperimentConfig, verb: &str, out: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let path = out.join("manifest.json");
    let manifest = Manifest {
        command: verb,
        config: cfg,
        outputs: files
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Everything the synthetic pipeline needs, derived from one config: grid,
/// frequencies, the true medium, its exact chain, and the (possibly noisy)
/// boundary data an inversion would see.
pub struct SyntheticSetup {
    pub grid: Grid1D,
    pub k_grid: KGrid,
    pub profile: ConductivityProfile,
    pub chain: TransformChain,
    pub data: DataG,
}

pub fn synthesize(cfg: &ExperimentConfig) -> Result<SyntheticSetup> {
    let grid = cfg.grid()?;
    let k_grid = cfg.k_grid()?;
    let profile = cfg.profile(&grid)?;
    let chain = TransformChain::from_profile(&profile, &k_grid, cfg.epsilon)?;
    let data = if cfg.delta > 0.0 {
        add_noise(&chain.data, cfg.delta, cfg.seed)?
    } else {
        chain.data.clone()
    };
    Ok(SyntheticSetup { grid, k_grid, profile, chain, data })
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out)?;
    Ok(out)
}

/// `forward`: synthesize boundary data and the exact transform-chain fields.
pub fn cmd_forward(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = ensure_out(cfg)?;
    let setup = synthesize(cfg)?;
    let mut files = Vec::new();

    let data_path = out.join("data_g.csv");
    let ks = setup.k_grid.values();
    if cfg.delta > 0.0 {
        write_table(
            &data_path,
            "k,g,g_prime,g_noisy,g_prime_noisy",
            ks.iter().enumerate().map(|(j, k)| {
                format!(
                    "{k},{},{},{},{}",
                    setup.chain.data.g[j],
                    setup.chain.data.g_prime[j],
                    setup.data.g[j],
                    setup.data.g_prime[j]
                )
            }),
        )?;
    } else {
        write_table(
            &data_path,
            "k,g,g_prime",
            ks.iter()
                .enumerate()
                .map(|(j, k)| format!("{k},{},{}", setup.data.g[j], setup.data.g_prime[j])),
        )?;
    }
    files.push(data_path);

    let chain_path = out.join("chain_fields.csv");
    let nodes = setup.grid.nodes().to_vec();
    write_table(
        &chain_path,
        "k,z,q,r,p",
        setup.chain.pairs.iter().enumerate().flat_map(|(j, fp)| {
            let p = &setup.chain.p_per_k[j];
            nodes
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    format!(
                        "{},{z},{},{},{}",
                        fp.k,
                        fp.q.values()[i],
                        fp.r.values()[i],
                        p.values()[i]
                    )
                })
                .collect::<Vec<_>>()
        }),
    )?;
    files.push(chain_path);

    files.push(write_manifest(cfg, "forward", &out, &files)?);
    Ok(files)
}

/// Per-frequency scalars worth reporting after an inversion.
#[derive(Serialize)]
struct PerKSummary {
    k: f64,
    iterations: usize,
    final_j: f64,
    final_grad_norm: f64,
    theta_hat: Option<f64>,
    stop_reason: crate::descent::StopReason,
    projections: usize,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct InversionReport<'a> {
    metrics: &'a ErrorMetrics,
    diagnostics: &'a crate::reconstruct::SigmaDiagnostics,
    data_noise: f64,
    per_k: Vec<PerKSummary>,
}

fn run_inversion(cfg: &ExperimentConfig) -> Result<(SyntheticSetup, InversionResult, ErrorMetrics)> {
    let setup = synthesize(cfg)?;
    let params = cfg.inversion_params();
    let result = invert(&setup.data, &setup.grid, &params, Some(&setup.chain))?;
    let metrics = error_metrics(&result, &setup.chain, &setup.profile)?;
    Ok((setup, result, metrics))
}

/// `invert`: run the full reconstruction and write its tables.
pub fn cmd_invert(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = ensure_out(cfg)?;
    let (setup, result, metrics) = run_inversion(cfg)?;
    let mut files = Vec::new();

    let sigma_path = out.join("sigma.csv");
    let truth = setup.profile.as_field();
    let nodes = setup.grid.nodes();
    write_table(
        &sigma_path,
        "z,sigma_comp,sigma_true,spread",
        (0..nodes.len()).map(|i| {
            format!(
                "{},{},{},{}",
                nodes[i],
                result.sigma_comp.values()[i],
                truth.values()[i],
                result.diagnostics.spread[i]
            )
        }),
    )?;
    files.push(sigma_path);

    let per_k_path = out.join("sigma_per_k.csv");
    let ks = setup.k_grid.values();
    write_table(
        &per_k_path,
        "k,z,sigma",
        result.sigma_per_k.iter().enumerate().flat_map(|(j, s)| {
            let k = ks[j];
            nodes
                .iter()
                .enumerate()
                .map(|(i, z)| format!("{k},{z},{}", s.values()[i]))
                .collect::<Vec<_>>()
        }),
    )?;
    files.push(per_k_path);

    let conv_path = out.join("convergence.csv");
    write_table(
        &conv_path,
        "k,iteration,j,grad_norm,norm_sum,projected,distance_to_truth",
        result.histories.iter().enumerate().flat_map(|(j, h)| {
            let k = ks[j];
            (0..h.j_values.len())
                .map(|i| {
                    let dist = h
                        .distances_to_truth
                        .as_ref()
                        .map(|d| d[i].to_string())
                        .unwrap_or_else(|| "nan".to_string());
                    format!(
                        "{k},{i},{},{},{},{},{dist}",
                        h.j_values[i], h.grad_norms[i], h.norm_sums[i], h.projected_flags[i]
                    )
                })
                .collect::<Vec<_>>()
        }),
    )?;
    files.push(conv_path);

    let report_path = out.join("inversion_report.json");
    let per_k = result
        .histories
        .iter()
        .enumerate()
        .map(|(j, h)| PerKSummary {
            k: ks[j],
            iterations: h.j_values.len() - 1,
            final_j: *h.j_values.last().unwrap(),
            final_grad_norm: *h.grad_norms.last().unwrap(),
            theta_hat: h.theta_hat,
            stop_reason: h.stop_reason,
            projections: h.projected_flags.iter().filter(|p| **p).count(),
            warnings: h.warnings.clone(),
        })
        .collect();
    write_json(
        &report_path,
        &InversionReport {
            metrics: &metrics,
            diagnostics: &result.diagnostics,
            data_noise: result.data_noise,
            per_k,
        },
    )?;
    files.push(report_path);

    files.push(write_manifest(cfg, "invert", &out, &files)?);
    Ok(files)
}

/// `verify`: fit the Carleman and convexity constants and cross-check the
/// gradient, all anchored at the configured profile's chain.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = ensure_out(cfg)?;
    let setup = synthesize(cfg)?;
    let anchor = &setup.chain.pairs[setup.k_grid.values().len() / 2];
    let radius = cfg
        .radius
        .unwrap_or_else(|| 3.0 * (h2_norm(&anchor.q) + h2_norm(&anchor.r)).max(1.0));
    let settings = VerifySettings { samples: cfg.samples, seed: cfg.seed, radius };

    let mut lambdas: Vec<f64> =
        CARLEMAN_LAMBDAS.iter().chain(cfg.lambda_sweep.iter()).copied().collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();

    let carleman = fit_carleman(&setup.grid, &lambdas, &settings)?;
    let convexity = fit_convexity(anchor, &lambdas, &settings)?;
    let params =
        crate::functional::FunctionalParams::new(cfg.lambda, cfg.epsilon, anchor.k, radius)?;
    let table = gradient_check_table(anchor, &params, 10, 10, 1e-5, cfg.seed)?;

    let mut files = Vec::new();
    let carleman_path = out.join("carleman_fit.csv");
    write_table(
        &carleman_path,
        "lambda,c0,samples",
        carleman.iter().map(|f| format!("{},{},{}", f.lambda, f.c0, f.samples)),
    )?;
    files.push(carleman_path);

    let convexity_path = out.join("convexity_fit.csv");
    write_table(
        &convexity_path,
        "lambda,c1,min_gap,positive,samples",
        convexity
            .iter()
            .map(|f| format!("{},{},{},{},{}", f.lambda, f.c1, f.min_gap, f.positive, f.samples)),
    )?;
    files.push(convexity_path);

    let gradient_path = out.join("gradient_check.csv");
    write_table(
        &gradient_path,
        "point,direction,analytic,finite_difference,rel_error",
        table.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.point, r.direction, r.analytic, r.finite_difference, r.rel_error
            )
        }),
    )?;
    files.push(gradient_path);

    let report_path = out.join("verify_report.json");
    let report = crate::functional::VerifyReport {
        lambda_tested: lambdas,
        carleman_c0: carleman.iter().map(|f| f.c0).collect(),
        convexity_c1: convexity.iter().map(|f| f.c1).collect(),
        min_gap: convexity.last().map(|f| f.min_gap).unwrap_or(f64::NAN),
        samples: cfg.samples,
    };
    write_json(&report_path, &report)?;
    files.push(report_path);

    files.push(write_manifest(cfg, "verify", &out, &files)?);
    Ok(files)
}

/// `sweep`: one inversion per parameter combination, plus a convexity study
/// when λ is among the swept parameters.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = ensure_out(cfg)?;
    let lambda_swept = cfg.delta_sweep.is_none() && cfg.epsilon_sweep.is_none();
    let lambdas: Vec<f64> =
        if lambda_swept { cfg.lambda_sweep.clone() } else { vec![cfg.lambda] };
    let deltas = cfg.delta_sweep.clone().unwrap_or_else(|| vec![cfg.delta]);
    let epsilons = cfg.epsilon_sweep.clone().unwrap_or_else(|| vec![cfg.epsilon]);
    if cfg.delta_sweep.is_none() && cfg.epsilon_sweep.is_none() && cfg.lambda_sweep.len() < 2 {
        return Err(Error::Config(
            "nothing to sweep: provide delta_sweep, epsilon_sweep, or a lambda_sweep with \
             several values"
                .to_string(),
        ));
    }

    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for &delta in &deltas {
            for &epsilon in &epsilons {
                let mut one = cfg.clone();
                one.lambda = lambda;
                one.delta = delta;
                one.epsilon = epsilon;
                let (_, result, metrics) = run_inversion(&one)?;
                let below = result.diagnostics.below_one.len();
                rows.push(format!(
                    "{lambda},{delta},{epsilon},{},{},{below}",
                    metrics.sigma_rel_l2, metrics.sigma_linf
                ));
            }
        }
    }

    let mut files = Vec::new();
    let sweep_path = out.join("sweep.csv");
    write_table(
        &sweep_path,
        "lambda,delta,epsilon,sigma_rel_l2,sigma_linf,nodes_below_one",
        rows,
    )?;
    files.push(sweep_path);

    if lambda_swept {
        let setup = synthesize(cfg)?;
        let anchor = &setup.chain.pairs[setup.k_grid.values().len() / 2];
        let radius = cfg
            .radius
            .unwrap_or_else(|| 3.0 * (h2_norm(&anchor.q) + h2_norm(&anchor.r)).max(1.0));
        let settings = VerifySettings { samples: cfg.samples, seed: cfg.seed, radius };
        let fits = fit_convexity(anchor, &cfg.lambda_sweep, &settings)?;
        let study_path = out.join("lambda_study.csv");
        write_table(
            &study_path,
            "lambda,c1,min_gap,positive,samples",
            fits.iter()
                .map(|f| format!("{},{},{},{},{}", f.lambda, f.c1, f.min_gap, f.positive, f.samples)),
        )?;
        files.push(study_path);

        #[derive(Serialize)]
        struct LambdaSummary {
            /// Smallest swept λ at which every sampled pair had a positive
            /// convexity gap — the empirical convexity threshold.
            empirical_lambda_one: Option<f64>,
        }
        let empirical = fits.iter().find(|f| f.positive == f.samples).map(|f| f.lambda);
        let summary_path = out.join("lambda_summary.json");
        write_json(&summary_path, &LambdaSummary { empirical_lambda_one: empirical })?;
        files.push(summary_path);
    }

    files.push(write_manifest(cfg, "sweep", &out, &files)?);
    Ok(files)
}
