//! Experiment orchestration for the heatlab numerical laboratory.
//!
//! `heatlab <subcommand>` runs one experiment family (steady profile and
//! spectrum, Duhamel envelope checks, modulation dynamics, correction fields,
//! inner linear theory, the direct simulator, the stability sweep, or the
//! parameter feasibility check), persisting plot-ready CSV/JSON artifacts and
//! a manifest recording the tool version, a SHA-256 hash of the resolved
//! configuration, and the wall time.
//!
//! Configuration is a flat dotted-key text file (TOML syntax, e.g.
//! `modulation.nu1 = 0.2`); every key can be overridden on the command line
//! with `--set key=value`. All floats are serialized in scientific notation
//! with 17 significant digits so that artifacts round-trip exactly.
//!
//! Exit codes: 0 success, 2 configuration error (including infeasible
//! parameter tuples), 3 numerical failure (a machine-readable `error.json`
//! is persisted).

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::time::Instant;

use heatlab::bubble::{eigenpair_residual, profile_u, shooting_gamma0, unstable_eigenpair};
use heatlab::corrections::{build_htilde, solve_phi0, PhiField};
use heatlab::inner::{coercivity_scan, SubspaceConstraint};
use heatlab::kernel::{verify_annular, verify_cauchy, verify_far};
use heatlab::modulation::{
    balance_residual, fit_c0, iterate_corrections, leading_mu0, leading_mu0_t, remainder_e_nu,
    ModulationPath,
};
use heatlab::params::ParameterTuple;
use heatlab::sim::{run, sim_grid, stability_experiment, tune_e0, CompositeProfile, SimConfig};
use heatlab::util::log_grid;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TupleConfig {
    kappa: f64,
    nu: f64,
    alpha: f64,
    a: f64,
    gamma: f64,
    delta5: f64,
    a1: f64,
}

impl Default for TupleConfig {
    fn default() -> Self {
        let t = ParameterTuple::example();
        Self {
            kappa: t.kappa,
            nu: t.nu,
            alpha: t.alpha,
            a: t.a,
            gamma: t.gamma,
            delta5: t.delta5,
            a1: t.a1,
        }
    }
}

impl TupleConfig {
    fn tuple(&self) -> ParameterTuple {
        ParameterTuple {
            kappa: self.kappa,
            nu: self.nu,
            alpha: self.alpha,
            a: self.a,
            gamma: self.gamma,
            delta5: self.delta5,
            a1: self.a1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BubbleConfig {
    n: usize,
    r_max: f64,
    eigen_tol: f64,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        Self { n: 4, r_max: 40.0, eigen_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct KernelConfig {
    /// `far`, `annular`, or `cauchy`
    family: String,
    b: f64,
    t0: f64,
    /// source amplitude; zero exercises the empty-ratio path
    amplitude: f64,
    quad_tol: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: "far".into(), b: 3.0, t0: 1.0, amplitude: 1.0, quad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModulationConfig {
    nu1: f64,
    t0: f64,
    rounds: usize,
    target_tol: f64,
    /// CSV sample range [t0, t_csv_max]
    t_csv_max: f64,
    csv_points: usize,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self { nu1: 0.2, t0: 1e5, rounds: 2, target_tol: 1e-10, t_csv_max: 1e7, csv_points: 30 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CorrectionsConfig {
    t: f64,
    quad_tol: f64,
    x_max: f64,
    n_profile: usize,
}

impl Default for CorrectionsConfig {
    fn default() -> Self {
        Self { t: 1e5, quad_tol: 1e-3, x_max: 0.0, n_profile: 80 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InnerConfig {
    n: usize,
    r_list: Vec<f64>,
    /// `unconstrained`, `ground-state-orthogonal`, or `higher-modes`
    constraint: String,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { n: 4, r_list: vec![20.0, 40.0, 80.0, 160.0], constraint: "ground-state-orthogonal".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateConfig {
    t0: f64,
    t_end: f64,
    e0: f64,
    #[serde(default = "d_true")]
    project_unstable: bool,
    /// bisect e₀ on the short-horizon dichotomy before the run
    bisect_e0: bool,
    quad_tol: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { t0: 1e3, t_end: 1e5, e0: 0.0, project_unstable: true, bisect_e0: false, quad_tol: 2e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StabilityConfig {
    ell: f64,
    amplitudes: Vec<f64>,
    t0: f64,
    t_end: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { ell: 4.0, amplitudes: vec![0.0, 1e-2], t0: 1e3, t_end: 1e5 }
    }
}

/// Resolved experiment configuration (defaults filled in, overrides applied).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    seed: u64,
    tuple: TupleConfig,
    bubble: BubbleConfig,
    kernel: KernelConfig,
    modulation: ModulationConfig,
    corrections: CorrectionsConfig,
    inner: InnerConfig,
    simulate: SimulateConfig,
    stability: StabilityConfig,
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "heatlab", version, about = "experiment runner for the bubbling laboratory")]
struct Cli {
    /// Configuration file (dotted-key text; missing file = all defaults)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV/JSON artifacts and the manifest
    #[arg(long, global = true, default_value = "heatlab-out")]
    out: PathBuf,
    /// Seed for randomized test fields (hashed into the manifest)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set modulation.rounds=<k>`
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Dotted-key override, repeatable: `--set modulation.nu1=0.2`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Cmd {
    /// Steady profile, kernel elements, and the unstable eigenpair
    Bubble,
    /// Duhamel envelope verification for one source family
    KernelCheck,
    /// Leading modulation balance, fixed-point corrections, residual table
    Modulation,
    /// Explicit correction fields and the elliptic profile with projection
    Corrections,
    /// Coercivity scan of the linearized quadratic form
    Inner,
    /// Direct radial run from the composite datum
    Simulate,
    /// Perturbation sweep of the run trajectory
    Stability,
    /// Parameter tuple feasibility verdict
    ParamsCheck,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Bubble => "bubble",
            Cmd::KernelCheck => "kernel-check",
            Cmd::Modulation => "modulation",
            Cmd::Corrections => "corrections",
            Cmd::Inner => "inner",
            Cmd::Simulate => "simulate",
            Cmd::Stability => "stability",
            Cmd::ParamsCheck => "params-check",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(real_main(cli));
}

fn real_main(cli: Cli) -> i32 {
    let started = Instant::now();
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    // feasibility gate for subcommands that consume the tuple
    let tuple = config.tuple.tuple();
    let needs_tuple = matches!(cli.cmd, Cmd::Simulate | Cmd::Stability);
    if needs_tuple && !tuple.check().feasible {
        eprintln!("configuration error: parameter tuple infeasible");
        return 2;
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("configuration error: cannot create output directory: {e}");
        return 2;
    }
    let verdict_feasible = tuple.check().feasible;
    let result = dispatch(cli.cmd, &config);
    let files = match result {
        Ok(files) => files,
        Err(e) => {
            let record = serde_json::json!({ "subcommand": cli.cmd.name(), "error": e });
            let _ = std::fs::write(
                cli.out.join("error.json"),
                serde_json::to_string_pretty(&record).unwrap(),
            );
            eprintln!("numerical failure: {e}");
            return 3;
        }
    };
    let mut names = Vec::new();
    for (name, contents) in &files {
        if let Err(e) = std::fs::write(cli.out.join(name), contents) {
            eprintln!("cannot persist {name}: {e}");
            return 3;
        }
        names.push(name.clone());
    }
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.cmd.name(),
        "config_sha256": config_hash(&config),
        "walltime_seconds": started.elapsed().as_secs_f64(),
        "outputs": names,
    });
    if let Err(e) = std::fs::write(
        cli.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    ) {
        eprintln!("cannot persist manifest: {e}");
        return 3;
    }
    // params-check doubles as a scripting predicate
    if matches!(cli.cmd, Cmd::ParamsCheck) && !verdict_feasible {
        return 2;
    }
    0
}

/// Loads the config file (if any), merges `--set` overrides and flag
/// shorthands, and deserializes with defaults.
fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let base = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        None => String::new(),
    };
    let mut table: toml::Table = base.parse().map_err(|e| format!("config parse: {e}"))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(rounds) = cli.rounds {
        overrides.push(format!("modulation.rounds={rounds}"));
    }
    for ov in &overrides {
        let doc: toml::Table = ov
            .parse()
            .map_err(|e| format!("override `{ov}`: {e}"))?;
        merge(&mut table, doc);
    }
    ExperimentConfig::deserialize(table).map_err(|e| format!("config schema: {e}"))
}

fn merge(base: &mut toml::Table, add: toml::Table) {
    for (k, v) in add {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(a)) => merge(b, a),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// SHA-256 of the canonical JSON serialization of the resolved config —
/// changes exactly when a semantically meaningful field changes.
fn config_hash(config: &ExperimentConfig) -> String {
    let canon = serde_json::to_string(config).unwrap();
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap()
}

type Artifacts = Vec<(String, String)>;

fn dispatch(cmd: Cmd, config: &ExperimentConfig) -> Result<Artifacts, String> {
    match cmd {
        Cmd::Bubble => cmd_bubble(config),
        Cmd::KernelCheck => cmd_kernel(config),
        Cmd::Modulation => cmd_modulation(config),
        Cmd::Corrections => cmd_corrections(config),
        Cmd::Inner => cmd_inner(config),
        Cmd::Simulate => cmd_simulate(config),
        Cmd::Stability => cmd_stability(config),
        Cmd::ParamsCheck => cmd_params(config),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_bubble(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.bubble;
    let pair = unstable_eigenpair(c.n, c.eigen_tol)?;
    let mut csv = String::from("r,value\n");
    let mut nodes = vec![0.0];
    nodes.extend(log_grid(1e-3, c.r_max, 400));
    for &r in &nodes {
        csv.push_str(&format!("{:.16e},{:.16e}\n", r, profile_u(c.n, r)));
    }
    let report = serde_json::json!({
        "n": c.n,
        "gamma0": pair.gamma0,
        "gamma0_shooting": shooting_gamma0(c.n, 20.0),
        "decay_rate": pair.decay_rate,
        "eigen_residual": eigenpair_residual(&pair),
    });
    Ok(vec![
        ("bubble_profile.csv".into(), csv),
        ("unstable_mode.csv".into(), pair.z0.to_csv()),
        ("bubble.json".into(), json_pretty(&report)),
    ])
}

fn cmd_kernel(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.kernel;
    let amp = c.amplitude;
    let t0 = c.t0;
    let grid: Vec<(f64, f64)> = vec![
        (2.0, 4.0 * t0 + 1.0),
        (6.0, 4.0 * t0 + 1.0),
        (3.0, 16.0 * t0 + 1.0),
        (12.0, 16.0 * t0 + 1.0),
        (24.0, 64.0 * t0 + 1.0),
    ];
    let report = match c.family.as_str() {
        "far" => verify_far(c.b, move |_| amp, t0, &grid, c.quad_tol)?,
        "annular" => verify_annular(
            c.b,
            move |s: f64| amp / s,
            |_| 2.0,
            |t: f64| t.sqrt(),
            t0,
            &grid,
            c.quad_tol,
        )?,
        "cauchy" => verify_cauchy(c.b, &grid, c.quad_tol)?,
        other => return Err(format!("unknown kernel family `{other}`")),
    };
    Ok(vec![("kernel_report.json".into(), json_pretty(&report))])
}

fn cmd_modulation(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.modulation;
    let c0 = fit_c0(c.t0, 1e3 * c.t0, 20)?;
    let rounds = iterate_corrections(c.nu1, c.t0, c.rounds, c.target_tol)?;
    // composite path μ₀ + Σ corrections on the shared correction grid (or the
    // leading path alone when no rounds are requested)
    let ts: Vec<f64> = match rounds.paths.first() {
        Some(p) => {
            let (lo, hi) = p.domain();
            log_grid(lo, hi, 400)
        }
        None => log_grid(c.t0 / 4.0, 1e3 * c.t0, 400),
    };
    let mut mu_total = Vec::new();
    let mut mu_t_total = Vec::new();
    for &t in &ts {
        let mut m = leading_mu0(t)?;
        let mut mt = leading_mu0_t(t)?;
        for p in &rounds.paths {
            m += p.mu_at(t);
            mt += p.mu_t_at(t);
        }
        mu_total.push(m);
        mu_t_total.push(mt);
    }
    let total = ModulationPath::new(ts, mu_total, mu_t_total);
    let (dom_lo, dom_hi) = total.domain();
    let t_lo = c.t0.max(2.5 * dom_lo);
    let t_hi = c.t_csv_max.min(dom_hi / 3.0);
    if t_hi <= t_lo {
        return Err("empty CSV sample range: raise t_csv_max or lower t0".into());
    }
    let mut header = String::from("t,mu0");
    for k in 0..rounds.paths.len() {
        header.push_str(&format!(",mu0{}", k + 1));
    }
    header.push_str(",mu_total,mu_t_total,residual,e_nu\n");
    let mut csv = header;
    for &t in &log_grid(t_lo, t_hi, c.csv_points) {
        let mut row = format!("{:.16e},{:.16e}", t, leading_mu0(t)?);
        for p in &rounds.paths {
            row.push_str(&format!(",{:.16e}", p.mu_at(t)));
        }
        row.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e},{:.16e}\n",
            total.mu_at(t),
            total.mu_t_at(t),
            balance_residual(&total, t)?,
            remainder_e_nu(&total, c.nu1, t)?,
        ));
        csv.push_str(&row);
    }
    let diag = serde_json::json!({
        "c0": c0,
        "nu1": c.nu1,
        "rounds": rounds.paths.len(),
        "contraction_factors": rounds.diags.iter().map(|d| d.contraction_factor).collect::<Vec<_>>(),
        "final_norms": rounds.diags.iter().map(|d| d.final_norm).collect::<Vec<_>>(),
        "residual_sups": rounds.residual_sups,
        "fitted_exponents": rounds.fitted_exponents,
    });
    Ok(vec![
        ("modulation.csv".into(), csv),
        ("modulation.json".into(), json_pretty(&diag)),
    ])
}

fn cmd_corrections(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.corrections;
    let t = c.t;
    let path = ModulationPath::leading((t * 1e-4 / 2.0).max(20.0), 1.1 * t, 60);
    let x_max = if c.x_max > 0.0 { c.x_max } else { 2.0 * t.sqrt() };
    let field = PhiField::build(&path, t, x_max, c.n_profile, c.quad_tol)?;
    let radii = log_grid(1e-2, x_max, 200);
    let rhs = build_htilde(&path, t, heatlab::corrections::default_y_max(t), c.quad_tol)?;
    let sol = solve_phi0(&rhs)?;
    let report = serde_json::json!({
        "t": t,
        "phi0_projection_drift": sol.wronskian_drift,
        "phi0_plug_back_residual": sol.plug_back_residual(&rhs, 0.5, 0.8 * rhs.y.last().unwrap()),
        "phi0_decay_constant": sol.decay_constant(),
        "phi0_c1_jump_at_one": sol.c1_jump_at_one(),
    });
    Ok(vec![
        ("correction_field.csv".into(), field.to_csv(&radii)),
        ("phi0_profile.csv".into(), sol.profile().to_csv()),
        ("corrections.json".into(), json_pretty(&report)),
    ])
}

fn cmd_inner(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.inner;
    let constraint = match c.constraint.as_str() {
        "unconstrained" => SubspaceConstraint::Unconstrained,
        "ground-state-orthogonal" => SubspaceConstraint::GroundStateOrthogonal,
        "higher-modes" => SubspaceConstraint::HigherModes,
        other => return Err(format!("unknown constraint `{other}`")),
    };
    let report = coercivity_scan(c.n, &c.r_list, constraint)?;
    Ok(vec![("coercivity.json".into(), json_pretty(&report))])
}

fn cmd_simulate(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.simulate;
    let mut sim_config = SimConfig::new(c.t0, c.t_end);
    sim_config.params = config.tuple.tuple();
    sim_config.e0 = c.e0;
    sim_config.project_unstable = c.project_unstable;
    sim_config.quad_tol = c.quad_tol;
    let mut files = Vec::new();
    let mut bisect_json = serde_json::Value::Null;
    if c.bisect_e0 {
        let profile = CompositeProfile::build(c.t0, &sim_config.params, c.quad_tol)?;
        let grid = sim_grid(&sim_config);
        let report = tune_e0(&profile, &grid, None, (-0.02, 0.02), 40)?;
        sim_config.e0 = report.e0;
        bisect_json = serde_json::to_value(&report).unwrap();
    }
    let log = run(&sim_config)?;
    let summary = serde_json::json!({
        "t0": c.t0,
        "t_end": c.t_end,
        "e0": sim_config.e0,
        "bisection": bisect_json,
        "outcome": log.outcome,
        "slope_vs_lnt": log.slope_vs_lnt,
        "r_squared": log.r_squared,
        "final_mu_hat_times_lnt": log.records.last().map(|r| r.mu_hat_times_lnt),
    });
    files.push(("run.csv".into(), log.to_csv()));
    files.push(("run.json".into(), json_pretty(&summary)));
    Ok(files)
}

fn cmd_stability(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let c = &config.stability;
    let report = stability_experiment(c.ell, &c.amplitudes, c.t0, c.t_end)?;
    Ok(vec![("stability.json".into(), json_pretty(&report))])
}

fn cmd_params(config: &ExperimentConfig) -> Result<Artifacts, String> {
    let report = config.tuple.tuple().check();
    Ok(vec![("params.json".into(), json_pretty(&report))])
}
