//! Command-line surface: `gen` writes problem files, `run` executes suites
//! and emits trace CSVs plus a manifest, `profile` and `trace` post-process
//! trace directories. The binary in `src/main.rs` is a thin wrapper around
//! [`execute`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::harness::{
    run_suite, trace_file_name, write_trace_csv, HarnessError, InitialPoint, Method, RunConfig,
};
use crate::metrics::{
    curves_to_csv, performance_profile, MetricsError, ProfileMetric, TraceSummary,
};
use crate::problem::{gen_random, load_problem, store_problem, GenSpec, ProblemError};

/// Environment variable selecting the worker-thread count for `run`.
pub const WORKERS_ENV: &str = "CCQN_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "ccqn",
    about = "Noisy-gradient quadratic minimization benchmarks",
    long_about = "Generates strictly convex quadratic test problems, runs search-direction \
                  benchmarks under gradient noise, and aggregates the traces into \
                  performance profiles and averaged gradient-norm curves."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random quadratic problem file.
    Gen(GenArgs),
    /// Run a method suite over problems and seeds, writing one trace CSV per
    /// (problem, method, seed) cell plus a manifest.
    Run(RunArgs),
    /// Aggregate a trace directory into a performance-profile CSV.
    Profile(ProfileArgs),
    /// Average the per-seed gradient-norm series of a trace directory into
    /// per-method curves.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Problem dimension.
    #[arg(long)]
    pub n: usize,
    /// Lower endpoint of the base-matrix entry range.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub a: f64,
    /// Upper endpoint of the base-matrix entry range.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub b: f64,
    /// Diagonal perturbation scale (must be positive).
    #[arg(long, default_value_t = 0.3)]
    pub eps: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output problem file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Sd,
    Cg,
    Bfgs,
    Mlbfgs,
    Ccqn,
    Lmccqn,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Problem file (repeatable).
    #[arg(long, required = true)]
    pub problem: Vec<PathBuf>,
    /// Method to run (repeatable): sd | cg | bfgs | mlbfgs | ccqn | lmccqn.
    #[arg(long, required = true, value_enum)]
    pub method: Vec<MethodName>,
    /// Exclusion probability level for ccqn/lmccqn.
    #[arg(long)]
    pub beta: Option<f64>,
    /// History window for lmccqn.
    #[arg(long = "K")]
    pub window: Option<usize>,
    /// Per-component gradient noise variance.
    #[arg(long)]
    pub sigma2: f64,
    /// Noisy gradient samples per step.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Number of replicate seeds.
    #[arg(long, default_value_t = 30)]
    pub seeds: usize,
    /// First replicate seed; replicates use seed-base..seed-base+seeds-1.
    #[arg(long, default_value_t = 1)]
    pub seed_base: u64,
    /// Termination tolerance on the true gradient norm.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Maximum number of steps.
    #[arg(long, default_value_t = 500)]
    pub maxk: usize,
    /// Output directory for trace CSVs and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricName {
    /// Steps needed to bring the true gradient norm under --tol.
    Steps,
    /// Minimum true gradient norm reached.
    MinNorm,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Directory of trace CSVs produced by `run`.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricName::Steps)]
    pub metric: MetricName,
    /// Tolerance defining the steps metric (required for --metric steps).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Directory of trace CSVs produced by `run`.
    #[arg(long)]
    pub traces: PathBuf,
    /// Problem label to select when the directory holds several problems.
    #[arg(long)]
    pub problem: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Profile(args) => cmd_profile(&args),
        Command::Trace(args) => cmd_trace(&args),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    if args.n < 1 {
        return Err(usage("--n must be at least 1"));
    }
    if !(args.eps > 0.0) {
        return Err(usage("--eps must be positive"));
    }
    let spec = GenSpec {
        n: args.n,
        a: args.a,
        b: args.b,
        eps: args.eps,
        seed: args.seed,
    };
    let problem = gen_random(&spec)?;
    store_problem(&problem, &args.out)?;
    println!("wrote {} ({})", args.out.display(), problem.label());
    Ok(())
}

fn resolve_method(name: MethodName, args: &RunArgs) -> Result<Method, CliError> {
    match name {
        MethodName::Sd => Ok(Method::Sd),
        MethodName::Cg => Ok(Method::SymCg),
        MethodName::Bfgs => Ok(Method::Bfgs),
        MethodName::Mlbfgs => Ok(Method::MemorylessBfgs),
        MethodName::Ccqn => {
            if args.window.is_some() {
                return Err(usage("--K applies only to lmccqn"));
            }
            Ok(Method::ChanceConstrained {
                beta: args.beta.unwrap_or(0.0),
                window: 0,
            })
        }
        MethodName::Lmccqn => {
            let window = args.window.unwrap_or(10);
            if window < 1 {
                return Err(usage("--K must be at least 1 for lmccqn"));
            }
            Ok(Method::ChanceConstrained {
                beta: args.beta.unwrap_or(0.0),
                window,
            })
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    if args.seeds < 1 {
        return Err(usage("--seeds must be at least 1"));
    }
    if let Some(beta) = args.beta {
        if !(0.0..1.0).contains(&beta) {
            return Err(usage("--beta must lie in [0, 1)"));
        }
        if !args
            .method
            .iter()
            .any(|m| matches!(m, MethodName::Ccqn | MethodName::Lmccqn))
        {
            return Err(usage("--beta applies only to ccqn and lmccqn"));
        }
    }
    if args.window.is_some()
        && !args.method.iter().any(|m| matches!(m, MethodName::Lmccqn))
    {
        return Err(usage("--K applies only to lmccqn"));
    }

    let problems = args
        .problem
        .iter()
        .map(|p| load_problem(p))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| args.seed_base + i).collect();
    let configs = args
        .method
        .iter()
        .map(|&name| {
            let method = resolve_method(name, args)?;
            Ok(RunConfig {
                tol: args.tol,
                max_steps: args.maxk,
                sigma2: args.sigma2,
                sample_count: args.samples,
                method,
                replicate_seeds: seeds.clone(),
                initial_point: InitialPoint::Zero,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    std::fs::create_dir_all(&args.out_dir)?;
    let traces = with_worker_pool(|| run_suite(&problems, &configs))?;
    for trace in &traces {
        let name = trace_file_name(&trace.problem_label, &trace.config.method, trace.seed);
        write_trace_csv(trace, &args.out_dir.join(name))?;
    }
    std::fs::write(
        args.out_dir.join("manifest.txt"),
        render_manifest(args, &problems, &configs),
    )?;
    println!("wrote {} traces to {}", traces.len(), args.out_dir.display());
    Ok(())
}

fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(workers) if workers >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f),
        _ => f(),
    }
}

fn render_manifest(
    args: &RunArgs,
    problems: &[crate::problem::QuadraticProblem],
    configs: &[RunConfig],
) -> String {
    let mut out = String::new();
    writeln!(out, "format = ccqn-run-manifest-v1").unwrap();
    for (path, problem) in args.problem.iter().zip(problems) {
        writeln!(
            out,
            "problem = {} (label {}, n {})",
            path.display(),
            problem.label(),
            problem.dim()
        )
        .unwrap();
    }
    for cfg in configs {
        writeln!(out, "method = {}", cfg.method.id()).unwrap();
    }
    writeln!(out, "sigma2 = {:e}", args.sigma2).unwrap();
    writeln!(out, "samples = {}", args.samples).unwrap();
    writeln!(out, "seeds = {}", args.seeds).unwrap();
    writeln!(out, "seed_base = {}", args.seed_base).unwrap();
    writeln!(out, "tol = {:e}", args.tol).unwrap();
    writeln!(out, "maxk = {}", args.maxk).unwrap();
    if let Some(beta) = args.beta {
        writeln!(out, "beta = {beta}").unwrap();
    }
    if let Some(window) = args.window {
        writeln!(out, "K = {window}").unwrap();
    }
    out
}

/// Loads every `*.csv` in the directory, in file-name order.
fn load_summaries(dir: &Path) -> Result<Vec<TraceSummary>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| TraceSummary::from_csv_file(p).map_err(CliError::from))
        .collect()
}

pub fn cmd_profile(args: &ProfileArgs) -> Result<(), CliError> {
    let summaries = load_summaries(&args.traces)?;
    let metric = match args.metric {
        MetricName::Steps => {
            let tol = args
                .tol
                .ok_or_else(|| usage("--metric steps requires --tol"))?;
            ProfileMetric::StepsToTolerance { tol }
        }
        MetricName::MinNorm => ProfileMetric::MinNorm,
    };
    let profile = performance_profile(&summaries, metric)?;
    std::fs::write(&args.out, profile.to_csv())?;
    println!(
        "wrote profile over {} methods to {}",
        profile.methods.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_trace(args: &TraceArgs) -> Result<(), CliError> {
    let mut summaries = load_summaries(&args.traces)?;
    if let Some(problem) = &args.problem {
        summaries.retain(|s| &s.problem == problem);
    }
    if summaries.is_empty() {
        return Err(MetricsError::EmptyResults.into());
    }
    let mut labels: Vec<&str> = summaries.iter().map(|s| s.problem.as_str()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() > 1 {
        return Err(usage(format!(
            "directory holds {} problems ({}); select one with --problem",
            labels.len(),
            labels.join(", ")
        )));
    }

    summaries.sort_by(|x, y| (&x.method, x.seed).cmp(&(&y.method, y.seed)));
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.method).or_default().push(s.true_norms);
    }
    std::fs::write(&args.out, curves_to_csv(&groups))?;
    println!("wrote curves for {} methods to {}", groups.len(), args.out.display());
    Ok(())
}
