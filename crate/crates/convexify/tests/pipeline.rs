//! End-to-end runs of the `convexify` binary: every verb, the flag
//! overrides, determinism of the written artifacts, and config rejection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convexify"))
}

/// A config small enough that an inversion finishes in well under a second.
const FAST: &str = "\
profile = \"bump\"
n_nodes = 51
n_k = 3
max_iters = 8
samples = 5
probe_gamma = false
gamma = 0.05
";

struct Run {
    out: PathBuf,
    output: Output,
    _dir: TempDir,
}

impl Run {
    fn stdout(&self) -> String {
        String::from_utf8_lossy(&self.output.stdout).into_owned()
    }
    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }
    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name))
            .unwrap_or_else(|e| panic!("expected artifact {name}: {e}"))
    }
}

fn run(verb: &str, config: &str, extra: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, config).unwrap();
    let out = dir.path().join("out");
    let output = bin()
        .arg(verb)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .expect("binary spawns");
    Run { out, output, _dir: dir }
}

fn assert_success(r: &Run, verb: &str) {
    assert!(
        r.output.status.success(),
        "{verb} failed:\nstdout: {}\nstderr: {}",
        r.stdout(),
        r.stderr()
    );
}

fn manifest(r: &Run) -> serde_json::Value {
    serde_json::from_str(&r.read("manifest.json")).expect("manifest parses")
}

#[test]
fn forward_writes_data_tables_and_a_manifest() {
    let r = run("forward", FAST, &[]);
    assert_success(&r, "forward");

    // Stdout lists exactly the written files, one per line.
    let stdout = r.stdout();
    let listed: Vec<&str> = stdout
        .lines()
        .map(|l| Path::new(l.trim()).file_name().unwrap().to_str().unwrap())
        .collect();
    assert_eq!(listed, ["data_g.csv", "chain_fields.csv", "manifest.json"]);

    let data = r.read("data_g.csv");
    assert!(data.starts_with("k,g,g_prime\n"), "noiseless header: {data}");
    assert_eq!(data.lines().count(), 4, "3 frequencies + header");

    let m = manifest(&r);
    assert_eq!(m["command"], "forward");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["config"]["n_nodes"], 51);
}

#[test]
fn forward_on_the_flat_profile_reproduces_the_background_data() {
    // σ ≡ 1 leaves the background field unperturbed, so g(k) = −1/2 for
    // every frequency — an exact oracle the whole synthetic path must hit.
    let r = run("forward", "profile = \"flat\"\nn_nodes = 51\nn_k = 3\n", &[]);
    assert_success(&r, "forward");
    for line in r.read("data_g.csv").lines().skip(1) {
        let g: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((g + 0.5).abs() < 1e-12, "flat-earth g must be −1/2, got {g}");
    }
}

#[test]
fn invert_writes_the_reconstruction_tables() {
    let r = run("invert", FAST, &[]);
    assert_success(&r, "invert");
    for name in
        ["sigma.csv", "sigma_per_k.csv", "convergence.csv", "inversion_report.json", "manifest.json"]
    {
        assert!(r.out.join(name).exists(), "missing {name}");
    }

    let sigma = r.read("sigma.csv");
    assert!(sigma.starts_with("z,sigma_comp,sigma_true,spread\n"));
    assert_eq!(sigma.lines().count(), 52, "51 nodes + header");

    let report: serde_json::Value = serde_json::from_str(&r.read("inversion_report.json")).unwrap();
    let rel = report["metrics"]["sigma_rel_l2"].as_f64().unwrap();
    assert!(rel.is_finite() && rel >= 0.0);
    assert_eq!(report["per_k"].as_array().unwrap().len(), 3);
}

#[test]
fn invert_artifacts_are_deterministic_across_reruns_and_thread_counts() {
    let a = run("invert", FAST, &["--threads", "1"]);
    let b = run("invert", FAST, &["--threads", "2"]);
    assert_success(&a, "invert");
    assert_success(&b, "invert");
    for name in ["sigma.csv", "sigma_per_k.csv", "convergence.csv"] {
        assert_eq!(a.read(name), b.read(name), "{name} differs between reruns");
    }
}

#[test]
fn the_seed_flag_changes_the_noise_draw() {
    let noisy = format!("{FAST}delta = 0.01\n");
    let a = run("forward", &noisy, &["--seed", "1"]);
    let b = run("forward", &noisy, &["--seed", "2"]);
    let c = run("forward", &noisy, &["--seed", "1"]);
    assert_success(&a, "forward");
    assert!(a.read("data_g.csv").starts_with("k,g,g_prime,g_noisy,g_prime_noisy\n"));
    assert_ne!(a.read("data_g.csv"), b.read("data_g.csv"), "different seeds, same draw");
    assert_eq!(a.read("data_g.csv"), c.read("data_g.csv"), "same seed, different draw");
    assert_eq!(manifest(&a)["config"]["seed"], 1, "manifest records the effective seed");
}

#[test]
fn verify_fits_positive_constants() {
    let r = run("verify", FAST, &[]);
    assert_success(&r, "verify");

    let carleman = r.read("carleman_fit.csv");
    assert!(carleman.starts_with("lambda,c0,samples\n"));
    for line in carleman.lines().skip(1) {
        let c0: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(c0 > 0.0, "Carleman constant must be positive: {line}");
    }

    let convexity = r.read("convexity_fit.csv");
    assert!(convexity.starts_with("lambda,c1,min_gap,positive,samples\n"));

    let report: serde_json::Value = serde_json::from_str(&r.read("verify_report.json")).unwrap();
    assert!(report["carleman_c0"].as_array().unwrap().len() >= 4);

    // The acceptance suite pins the gradient to 1e-5 on its 201-node grid;
    // on this 51-node smoke grid the finite differences are a little coarser.
    let gradient = r.read("gradient_check.csv");
    for line in gradient.lines().skip(1) {
        let rel: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(rel <= 1e-4, "gradient check row out of tolerance: {line}");
    }
}

#[test]
fn sweep_over_noise_levels_writes_one_row_per_combination() {
    let cfg = format!("{FAST}delta_sweep = [0.0, 0.01]\n");
    let r = run("sweep", &cfg, &[]);
    assert_success(&r, "sweep");
    let sweep = r.read("sweep.csv");
    assert!(sweep.starts_with("lambda,delta,epsilon,sigma_rel_l2,sigma_linf,nodes_below_one\n"));
    assert_eq!(sweep.lines().count(), 3, "two δ values + header");
    assert_eq!(manifest(&r)["command"], "sweep");
}

#[test]
fn sweep_over_lambda_reports_the_empirical_convexity_threshold() {
    let cfg = format!("{FAST}lambda_sweep = [1.0, 3.0]\n");
    let r = run("sweep", &cfg, &[]);
    assert_success(&r, "sweep");
    assert_eq!(r.read("sweep.csv").lines().count(), 3);
    let study = r.read("lambda_study.csv");
    assert_eq!(study.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&r.read("lambda_summary.json")).unwrap();
    assert!(summary.get("empirical_lambda_one").is_some());
}

#[test]
fn unknown_config_keys_are_rejected_by_name() {
    let r = run("forward", "n_modes = 51\n", &[]);
    assert!(!r.output.status.success(), "unknown key must fail the run");
    assert!(r.stderr().contains("n_modes"), "error names the bad key: {}", r.stderr());
}

#[test]
fn out_of_range_values_are_rejected_by_key() {
    let r = run("invert", "n_nodes = 3\n", &[]);
    assert!(!r.output.status.success());
    assert!(r.stderr().contains("n_nodes"), "error names the key: {}", r.stderr());

    let r = run("invert", "gamma = 1.5\n", &[]);
    assert!(!r.output.status.success());
    assert!(r.stderr().contains("gamma"), "error names the key: {}", r.stderr());
}

#[test]
fn a_missing_config_file_is_a_clean_error() {
    let out = bin()
        .args(["forward", "--config", "/nonexistent/run.toml"])
        .output()
        .expect("binary spawns");
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/run.toml"), "error names the path: {err}");
}
