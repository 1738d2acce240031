//! `eqk solve`: load an instance, run one method, write flows, certificate
//! and run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use eqk_core::dual::{gamma_for_accuracy, solve, Certificate, DualMethod, SolverConfig};
use eqk_core::paths::{
    count_paths, penalty_lambda_sweep, solve_path_fgm, solve_penalty, PathFgmConfig, PathSet, PenaltyConfig,
    PenaltySolution,
};
use eqk_core::{CostModel, Network};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io;
use crate::{GammaArg, Method, SolveArgs};

/// Largest path set enumerated for the path methods and for `--gamma auto`
/// on graphs with cycles.
pub const MAX_PATHS: usize = 100_000;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
/// Penalty sweep used when `--lambda` is not given: `λ = 1, 0.1, …`.
const SWEEP_START: f64 = 1.0;
const SWEEP_FACTOR: f64 = 0.1;
const SWEEP_STEPS: usize = 10;

/// Everything the solver was actually run with. Solver configurations are
/// built from this record, so the manifest cannot drift from the run.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub method: String,
    pub gamma: f64,
    /// `explicit` or `auto`.
    pub gamma_source: String,
    pub target_accuracy: Option<f64>,
    pub path_count_bounds: Option<Vec<f64>>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub model_override: Option<String>,
    pub lambda: Option<f64>,
    pub residual_tolerance: Option<f64>,
}

impl ResolvedConfig {
    fn dual_config(&self, method: DualMethod) -> SolverConfig {
        SolverConfig::new(method, self.gamma, self.epsilon)
            .with_max_iters(self.max_iters)
            .with_seed(self.seed)
    }

    fn path_config(&self) -> PathFgmConfig {
        let mut cfg = PathFgmConfig::new(self.gamma, self.epsilon);
        cfg.max_iters = self.max_iters;
        cfg
    }

    fn penalty_config(&self, lambda: f64) -> PenaltyConfig {
        let mut cfg = PenaltyConfig::new(self.gamma, self.epsilon)
            .with_lambda(lambda)
            .with_residual_tolerance(self.residual_tolerance.unwrap_or(self.epsilon));
        cfg.max_iters = self.max_iters;
        cfg
    }
}

#[derive(Debug, Serialize)]
struct Inputs {
    edges: PathBuf,
    trips: PathBuf,
}

#[derive(Debug, Serialize)]
struct Outputs {
    flows: PathBuf,
    certificate: PathBuf,
    paths: Option<PathBuf>,
    manifest: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    inputs: Inputs,
    config: ResolvedConfig,
    wall_time_seconds: f64,
    outputs: Outputs,
    converged: bool,
    exit_code: u8,
}

#[derive(Debug, Serialize)]
struct PenaltyRun {
    lambda: f64,
    iterations: usize,
    gap: f64,
    residual: f64,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct PenaltyInfo {
    lambda: f64,
    /// `‖Θx − f‖₂` of the reported pair.
    residual: f64,
    residual_tolerance: f64,
    /// The penalized gap must reach `λε`.
    gap_target: f64,
    runs: Vec<PenaltyRun>,
}

#[derive(Debug, Serialize)]
struct CertificateFile<'a> {
    #[serde(flatten)]
    certificate: &'a Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    penalty: Option<PenaltyInfo>,
}

/// Flows, times and certificate of a finished run.
struct RunResult {
    flow: Vec<f64>,
    time: Vec<f64>,
    certificate: Certificate,
    penalty: Option<PenaltyInfo>,
    paths: Option<PathSet>,
}

/// Path counts for `--gamma auto`: the user bound for every pair, or exact
/// counts.
fn path_counts(network: &Network, bound: Option<f64>) -> Result<Vec<f64>> {
    if let Some(b) = bound {
        return Ok(vec![b; network.ods().len()]);
    }
    (0..network.ods().len())
        .map(|w| {
            count_paths(network, w, MAX_PATHS).map_err(|e| match e {
                eqk_core::Error::TooManyPaths { .. } => CliError::Usage(format!(
                    "OD pair {w} has more than {MAX_PATHS} paths; pass --path-count-bound-per-od for --gamma auto"
                )),
                other => CliError::core("counting paths", other),
            })
        })
        .collect()
}

pub fn resolve(args: &SolveArgs, network: &Network) -> Result<ResolvedConfig> {
    let (gamma, gamma_source, bounds) = match args.gamma {
        GammaArg::Value(g) => (g, "explicit", None),
        GammaArg::Auto => {
            let target = args
                .target_accuracy
                .ok_or_else(|| CliError::Usage("--gamma auto requires --target-accuracy".into()))?;
            let counts = path_counts(network, args.path_count_bound_per_od)?;
            let gamma = gamma_for_accuracy(network, target, &counts).map_err(|e| CliError::core("--gamma auto", e))?;
            if gamma.is_infinite() {
                return Err(CliError::Usage(
                    "every OD pair has a single path, so the entropy term vanishes for any gamma; pass an explicit --gamma"
                        .into(),
                ));
            }
            log::info!("gamma = {gamma:e} for target accuracy {target:e}");
            (gamma, "auto", Some(counts))
        }
    };
    if gamma == 0.0 && matches!(args.method, Method::DualFgm | Method::DualUniversal) {
        return Err(CliError::Usage(format!(
            "--gamma 0 makes the dual objective nonsmooth and {} cannot run on it; use --method dual-smd",
            args.method.name()
        )));
    }
    let penalty = args.method == Method::PathPenalty;
    Ok(ResolvedConfig {
        method: args.method.name().to_string(),
        gamma,
        gamma_source: gamma_source.to_string(),
        target_accuracy: args.target_accuracy,
        path_count_bounds: bounds,
        epsilon: args.epsilon,
        max_iters: args.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
        seed: args.seed,
        threads: args.threads,
        model_override: args.model.map(|m| io::model_name(m.into()).to_string()),
        lambda: if penalty { args.lambda } else { None },
        residual_tolerance: if penalty { Some(args.residual_tolerance) } else { None },
    })
}

/// Travel times of primal flows: `τ(f)` for BPR, `t̄` for stable dynamics
/// (below capacity the time is `t̄`; at capacity the queueing delay is not
/// recoverable from the flow alone).
fn times_of(network: &Network, flow: &[f64]) -> Vec<f64> {
    network
        .edges()
        .iter()
        .zip(flow)
        .map(|(e, &f)| match e.cost.model {
            CostModel::Bpr => e.cost.cost(f.max(0.0)).unwrap_or(f64::NAN),
            CostModel::StableDynamics => e.cost.t_free,
        })
        .collect()
}

fn penalty_certificate(config: &ResolvedConfig, runs: &[PenaltySolution]) -> (Certificate, PenaltyInfo) {
    let last = runs.last().expect("at least one penalty run");
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let certificate = Certificate {
        method: config.method.clone(),
        gamma: config.gamma,
        epsilon: config.epsilon,
        iterations,
        primal_value: last.objective,
        dual_value: -last.lower_bound,
        gap: last.gap,
        capacity_violation: 0.0,
        converged: last.converged,
        gradient_evaluations: iterations,
        max_lipschitz: None,
        trace: last.trace.clone(),
    };
    let info = PenaltyInfo {
        lambda: last.lambda,
        residual: last.residual,
        residual_tolerance: config.residual_tolerance.unwrap_or(config.epsilon),
        gap_target: last.lambda * config.epsilon,
        runs: runs
            .iter()
            .map(|r| PenaltyRun {
                lambda: r.lambda,
                iterations: r.iterations,
                gap: r.gap,
                residual: r.residual,
                converged: r.converged,
            })
            .collect(),
    };
    (certificate, info)
}

fn run_method(method: Method, network: &Network, config: &ResolvedConfig) -> Result<RunResult> {
    let solver = |e| CliError::core(format!("{} solver", config.method), e);
    let dual = |m: DualMethod| -> Result<RunResult> {
        let eq = solve(network, &config.dual_config(m)).map_err(solver)?;
        Ok(RunResult {
            flow: eq.f_star.f,
            time: eq.t_star.t,
            certificate: eq.certificate,
            penalty: None,
            paths: None,
        })
    };
    match method {
        Method::DualFgm => dual(DualMethod::Fgm),
        Method::DualUniversal => dual(DualMethod::Universal),
        Method::DualSmd => dual(DualMethod::Smd),
        Method::PathFgm => {
            let paths = PathSet::enumerate(network, MAX_PATHS).map_err(|e| CliError::core("enumerating paths", e))?;
            let sol = solve_path_fgm(network, &paths, &config.path_config()).map_err(solver)?;
            Ok(RunResult {
                time: times_of(network, &sol.flow.f),
                flow: sol.flow.f,
                certificate: sol.certificate,
                penalty: None,
                paths: Some(paths),
            })
        }
        Method::PathPenalty => {
            let paths = PathSet::enumerate(network, MAX_PATHS).map_err(|e| CliError::core("enumerating paths", e))?;
            let runs = match config.lambda {
                Some(lambda) => vec![solve_penalty(network, &paths, &config.penalty_config(lambda)).map_err(solver)?],
                None => penalty_lambda_sweep(
                    network,
                    &paths,
                    &config.penalty_config(SWEEP_START),
                    SWEEP_FACTOR,
                    SWEEP_STEPS,
                )
                .map_err(solver)?,
            };
            let (certificate, info) = penalty_certificate(config, &runs);
            let flow = runs.last().expect("at least one penalty run").f.f.clone();
            Ok(RunResult {
                time: times_of(network, &flow),
                flow,
                certificate,
                penalty: Some(info),
                paths: Some(paths),
            })
        }
    }
}

/// Runs `solve` and returns whether the method converged.
pub fn run(args: &SolveArgs) -> Result<bool> {
    let start = Instant::now();
    let network = io::load(&args.edges, &args.trips, args.model.map(Into::into))?;
    log::info!(
        "loaded {} vertices, {} edges, {} OD pairs",
        network.num_vertices(),
        network.num_edges(),
        network.ods().len()
    );
    let config = resolve(args, &network)?;
    let result = run_method(args.method, &network, &config)?;
    let converged = result.certificate.converged;
    log::info!(
        "{}: {} iterations, gap {:e}, converged {}",
        config.method,
        result.certificate.iterations,
        result.certificate.gap,
        converged
    );

    io::write_flows(&args.out_flows, &network, &result.flow, &result.time)?;
    let file = CertificateFile { certificate: &result.certificate, penalty: result.penalty };
    io::write_json(&args.out_cert, &file)?;
    let manifest_path = args.out_manifest.clone().unwrap_or_else(|| default_manifest_path(&args.out_cert));
    let paths_out = match (&args.out_paths, &result.paths) {
        (Some(p), Some(set)) => {
            io::write_paths(p, set)?;
            Some(p.clone())
        }
        (Some(_), None) => {
            log::warn!("--out-paths ignored: {} does not use a path set", config.method);
            None
        }
        _ => None,
    };
    let manifest = RunManifest {
        tool: "eqk",
        version: env!("CARGO_PKG_VERSION"),
        command: "solve",
        inputs: Inputs { edges: args.edges.clone(), trips: args.trips.clone() },
        config,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: Outputs {
            flows: args.out_flows.clone(),
            certificate: args.out_cert.clone(),
            paths: paths_out,
            manifest: manifest_path.clone(),
        },
        converged,
        exit_code: if converged { 0 } else { 2 },
    };
    io::write_json(&manifest_path, &manifest)?;
    Ok(converged)
}

/// Default manifest location next to the certificate.
pub fn default_manifest_path(cert: &Path) -> PathBuf {
    let stem = cert.file_stem().and_then(|s| s.to_str()).unwrap_or("certificate");
    cert.with_file_name(format!("{stem}.manifest.json"))
}
