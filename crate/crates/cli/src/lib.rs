//! Command-line front end for `eqk-core`.
//!
//! Exit status is the only success signal: 0 on success, 1 on input errors,
//! 2 when a solver stops without reaching its target (outputs are still
//! written), 3 when a verification check fails.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqk_core::CostModel;

pub mod error;
pub mod io;
pub mod psi;
pub mod solve;
pub mod tntp;
pub mod verify;

pub use error::{CliError, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "eqk", version, about = "Stochastic traffic equilibria via smoothed characteristic functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an instance and write flows, certificate and run manifest.
    Solve(SolveArgs),
    /// Run oracle checks on the built-in instances.
    Verify(VerifyArgs),
    /// Evaluate the smoothed characteristic function at a dual point.
    Psi(PsiArgs),
    /// Convert TNTP network and trip tables to edge and trip CSVs.
    ConvertTntp(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    DualFgm,
    DualUniversal,
    DualSmd,
    PathFgm,
    PathPenalty,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::DualFgm => "dual-fgm",
            Self::DualUniversal => "dual-universal",
            Self::DualSmd => "dual-smd",
            Self::PathFgm => "path-fgm",
            Self::PathPenalty => "path-penalty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Bpr,
    Sd,
}

impl From<ModelArg> for CostModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bpr => CostModel::Bpr,
            ModelArg::Sd => CostModel::StableDynamics,
        }
    }
}

/// `--gamma` takes a nonnegative number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaArg {
    Value(f64),
    Auto,
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(g) if g >= 0.0 && g.is_finite() => Ok(Self::Value(g)),
            _ => Err(format!("expected a finite nonnegative number or `auto`, got `{s}`")),
        }
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Edge table `tail,head,t_free,capacity,rho,mu_power,model`.
    #[arg(long)]
    pub edges: PathBuf,
    /// Trip table `origin,destination,demand`.
    #[arg(long)]
    pub trips: PathBuf,
    /// Use this cost model for every edge instead of the `model` column.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum, default_value = "dual-fgm")]
    pub method: Method,
    /// Smoothing level, or `auto` to derive it from --target-accuracy.
    #[arg(long, default_value = "1")]
    pub gamma: GammaArg,
    #[arg(long, default_value = "1e-6", value_parser = positive)]
    pub epsilon: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-sink work (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "flows.csv")]
    pub out_flows: PathBuf,
    #[arg(long, default_value = "certificate.json")]
    pub out_cert: PathBuf,
    /// Run manifest (default: `<certificate stem>.manifest.json`).
    #[arg(long)]
    pub out_manifest: Option<PathBuf>,
    /// Path-set table for the path methods.
    #[arg(long)]
    pub out_paths: Option<PathBuf>,
    /// Penalty weight for path-penalty. Without it λ is swept down from 1.
    #[arg(long, value_parser = positive)]
    pub lambda: Option<f64>,
    /// Bound on the coupling residual ‖Θx − f‖₂ for path-penalty.
    #[arg(long, default_value = "1e-4", value_parser = positive)]
    pub residual_tolerance: f64,
    /// Accuracy the regularization must respect, for --gamma auto.
    #[arg(long, value_parser = positive)]
    pub target_accuracy: Option<f64>,
    /// Upper bound on the number of paths of every OD pair, for --gamma auto.
    #[arg(long)]
    pub path_count_bound_per_od: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// Ordered and layered recursions against path enumeration.
    PsiExactness,
    /// Expected loads against central differences of ψ.
    GradientCheck,
    /// Expected loads against the enumerated Gibbs distribution.
    GibbsLoads,
    /// Monte Carlo unbiasedness of the sampled gradient.
    Sampler,
    /// Certificate gap of the dual methods.
    DualityGap,
    /// Dual solution against the logit fixed point on parallel links.
    Logit,
    /// Regularized solution against the deterministic equilibrium.
    Wardrop,
    /// Path and dual formulations against each other.
    PathAgreement,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run only these checks (repeatable).
    #[arg(long, value_enum)]
    pub only: Vec<Check>,
    /// Restrict to one built-in instance.
    #[arg(long)]
    pub instance: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON lines here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("point").required(true).args(["times", "free_flow"])))]
pub struct PsiArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Table with `edge_index` and `time` columns (a flows CSV works).
    #[arg(long)]
    pub times: Option<PathBuf>,
    /// Evaluate at the free-flow times.
    #[arg(long)]
    pub free_flow: bool,
    #[arg(long, default_value = "1")]
    pub gamma: f64,
    /// Also report the discrepancy between ordered and layered recursions.
    #[arg(long)]
    pub compare_layered: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    /// TNTP network file (`*_net.tntp`).
    #[arg(long)]
    pub net: PathBuf,
    /// TNTP trip table (`*_trips.tntp`).
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long)]
    pub out_edges: PathBuf,
    #[arg(long)]
    pub out_trips: PathBuf,
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let edges = tntp::read_net(&args.net)?;
    let trips = tntp::read_trips(&args.trips)?;
    eqk_core::network::load_network(&edges, &trips)
        .map_err(|e| CliError::core(format!("{} / {}", args.net.display(), args.trips.display()), e))?;
    io::write_edges(&args.out_edges, &edges)?;
    io::write_trips(&args.out_trips, &trips)?;
    log::info!("wrote {} edges and {} OD pairs", edges.len(), trips.len());
    Ok(())
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command and returns the exit status.
pub fn run(cli: Cli) -> u8 {
    let outcome = match &cli.command {
        Command::Solve(args) => set_threads(args.threads).and_then(|_| solve::run(args)).map(|converged| {
            if converged {
                EXIT_OK
            } else {
                log::error!("solver stopped before reaching the target; outputs hold the final state");
                EXIT_NOT_CONVERGED
            }
        }),
        Command::Verify(args) => verify::run(args).map(|ok| if ok { EXIT_OK } else { EXIT_VERIFY_FAILED }),
        Command::Psi(args) => psi::run(args).map(|_| EXIT_OK),
        Command::ConvertTntp(args) => convert(args).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
