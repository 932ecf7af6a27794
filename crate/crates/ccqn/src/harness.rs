//! The outer iteration: sample a gradient batch, compute a direction with
//! the configured method, take an exact-linesearch step on the true
//! quadratic, record everything, and repeat until the true gradient norm
//! passes the tolerance or the step budget runs out.
//!
//! Engine breakdowns never abort a run; they degrade the step to steepest
//! descent (or, for BFGS, skip the matrix update) and are recorded in the
//! step flags. Suites over (problem × method × seed) cells are embarrassingly
//! parallel and bitwise deterministic regardless of scheduling, because each
//! cell derives its own noise stream.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::chance::{self, CcqnError, DEFAULT_DELTA_SCALE};
use crate::engines::{self, BfgsState, EngineError, LowRankState};
use crate::linalg::{self, dot, norm};
use crate::noise::{sample_batch, NoiseSpec, NoiseStream};
use crate::problem::{ProblemError, QuadraticProblem};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot linesearch along a zero direction")]
    ZeroDirection,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Noise(#[from] crate::noise::NoiseError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Search-direction method, including the chance-constrained variants
/// parameterized by the exclusion level β and the history window K.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Sd,
    SymCg,
    Bfgs,
    MemorylessBfgs,
    ChanceConstrained { beta: f64, window: usize },
}

impl Method {
    /// Stable identifier used in filenames, stream derivation, and CSV
    /// output.
    pub fn id(&self) -> String {
        match self {
            Method::Sd => "sd".into(),
            Method::SymCg => "cg".into(),
            Method::Bfgs => "bfgs".into(),
            Method::MemorylessBfgs => "mlbfgs".into(),
            Method::ChanceConstrained { beta, window: 0 } => format!("ccqn-b{beta}"),
            Method::ChanceConstrained { beta, window } => format!("lmccqn-b{beta}-K{window}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    Zero,
    Point(Vec<f64>),
}

impl InitialPoint {
    fn materialize(&self, n: usize) -> Vec<f64> {
        match self {
            InitialPoint::Zero => vec![0.0; n],
            InitialPoint::Point(x) => x.clone(),
        }
    }
}

/// Full configuration of a run cell (the replicate seed is supplied
/// separately to [`run_single`], or through `replicate_seeds` by
/// [`run_suite`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tol: f64,
    pub max_steps: usize,
    pub sigma2: f64,
    pub sample_count: usize,
    pub method: Method,
    pub replicate_seeds: Vec<u64>,
    pub initial_point: InitialPoint,
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        RunConfig {
            tol: 1e-8,
            max_steps: 500,
            sigma2: 0.0,
            sample_count: 20,
            method,
            replicate_seeds: vec![1],
            initial_point: InitialPoint::Zero,
        }
    }

    fn validate(&self) {
        assert!(self.tol > 0.0, "tolerance must be positive");
        assert!(self.max_steps >= 1, "max_steps must be >= 1");
        assert!(self.sigma2 >= 0.0, "sigma2 must be nonnegative");
        assert!(self.sample_count >= 1, "sample_count must be >= 1");
        if let Method::ChanceConstrained { beta, .. } = self.method {
            assert!((0.0..1.0).contains(&beta), "beta must lie in [0,1)");
        }
    }
}

/// Flags attached to an executed step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepFlags {
    /// The engine broke down and the step fell back to steepest descent.
    pub restart: bool,
    /// The direction was an ascent direction for the true gradient
    /// (negative step length).
    pub ascent: bool,
    /// The BFGS matrix update was skipped for this step.
    pub update_skipped: bool,
    /// Number of scenarios the chance solve excluded.
    pub exclusions: Option<usize>,
}

impl StepFlags {
    pub fn render(&self) -> String {
        let mut tokens = Vec::new();
        if self.restart {
            tokens.push("restart".to_string());
        }
        if self.ascent {
            tokens.push("ascent".to_string());
        }
        if self.update_skipped {
            tokens.push("skip".to_string());
        }
        if let Some(n) = self.exclusions {
            if n > 0 {
                tokens.push(format!("excl={n}"));
            }
        }
        tokens.join(";")
    }
}

/// The step taken from an iterate (absent on the terminal record).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub direction: Vec<f64>,
    pub alpha: f64,
    pub flags: StepFlags,
}

/// State at iteration k plus, when a step was taken from here, the step
/// itself.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub iterate: Vec<f64>,
    pub true_norm: f64,
    pub mean_norm: f64,
    pub objective: f64,
    pub step: Option<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    Tolerance,
    MaxSteps,
    /// Even the steepest-descent fallback produced a zero direction.
    BreakdownFallbackExhausted,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::Tolerance => "tolerance",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::BreakdownFallbackExhausted => "breakdown-fallback-exhausted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: RunConfig,
    pub problem_label: String,
    pub seed: u64,
    pub records: Vec<IterateRecord>,
    pub termination: TerminationReason,
}

impl RunTrace {
    pub fn true_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.true_norm).collect()
    }
}

/// Exact step length minimizing the quadratic along `dir` from `x`, using
/// the true gradient: `α = −gᵀp / pᵀHp`. Negative when `dir` is an ascent
/// direction — the minimizer on the line is still taken.
pub fn exact_linesearch(
    problem: &QuadraticProblem,
    x: &[f64],
    dir: &[f64],
) -> Result<f64, HarnessError> {
    if norm(dir) == 0.0 {
        return Err(HarnessError::ZeroDirection);
    }
    let g = problem.true_gradient(x)?;
    let curvature = problem.curvature_along(dir)?;
    Ok(-dot(&g, dir) / curvature)
}

/// Per-method engine state threaded through one run.
enum MethodState {
    Stateless,
    Bfgs(BfgsState),
}

fn compute_direction(
    method: &Method,
    k: usize,
    batch: &crate::noise::GradientBatch,
    low_rank: Option<&LowRankState>,
    method_state: &mut MethodState,
    mean_history: &[Vec<f64>],
) -> (Vec<f64>, StepFlags) {
    let mut flags = StepFlags::default();
    if k == 0 {
        // No history exists; every method starts with steepest descent.
        if let (Method::Bfgs, MethodState::Bfgs(state)) = (method, &*method_state) {
            return (state.direction(batch), flags);
        }
        return (engines::sd_direction(batch), flags);
    }
    let prev = low_rank.expect("state exists after the first step");

    match method {
        Method::Sd => (engines::sd_direction(batch), flags),
        Method::SymCg => match engines::symcg_direction(prev, batch) {
            Ok(dir) => (dir, flags),
            Err(EngineError::DegenerateDenominator) | Err(_) => {
                flags.restart = true;
                (engines::sd_direction(batch), flags)
            }
        },
        Method::Bfgs => {
            let MethodState::Bfgs(state) = method_state else {
                unreachable!("BFGS runs carry BFGS state")
            };
            match engines::bfgs_update(state, prev, batch) {
                Ok(updated) => *state = updated,
                Err(_) => flags.update_skipped = true,
            }
            (state.direction(batch), flags)
        }
        Method::MemorylessBfgs => match engines::mlbfgs_direction(prev, batch) {
            Ok(dir) => (dir, flags),
            Err(_) => {
                flags.restart = true;
                (engines::sd_direction(batch), flags)
            }
        },
        Method::ChanceConstrained { beta, window } => {
            let result = ccqn_direction(*beta, *window, k, prev, batch, mean_history);
            match result {
                Ok((dir, excluded)) => {
                    flags.exclusions = Some(excluded);
                    (dir, flags)
                }
                Err(_) => {
                    flags.restart = true;
                    (engines::sd_direction(batch), flags)
                }
            }
        }
    }
}

/// The history deltas `Δgᵢ = ḡᵢ₊₁ − ḡᵢ` for `i = max(0, k−K) .. k−2`;
/// the step-k scenario term is built separately from the batch samples.
pub(crate) fn delta_window(mean_history: &[Vec<f64>], k: usize, window: usize) -> Vec<Vec<f64>> {
    let start = k.saturating_sub(window);
    let mut deltas = Vec::new();
    if k >= 2 {
        for i in start..=(k - 2) {
            deltas.push(linalg::sub(&mean_history[i + 1], &mean_history[i]));
        }
    }
    deltas
}

/// Solves the chance-constrained subproblem over the configured window.
fn ccqn_direction(
    beta: f64,
    window: usize,
    k: usize,
    prev: &LowRankState,
    batch: &crate::noise::GradientBatch,
    mean_history: &[Vec<f64>],
) -> Result<(Vec<f64>, usize), CcqnError> {
    let deltas = delta_window(mean_history, k, window);
    let inst = chance::build_instance(&deltas, prev, batch, beta, DEFAULT_DELTA_SCALE)?;
    let solution = if beta == 0.0 {
        chance::solve_scenario(&inst)?
    } else {
        chance::solve_chance(&inst, beta)?
    };
    Ok((solution.direction, solution.excluded.len()))
}

/// One deterministic run: identical `(problem, cfg, seed)` always produces
/// an identical trace.
pub fn run_single(
    problem: &QuadraticProblem,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunTrace, HarnessError> {
    cfg.validate();
    let n = problem.dim();
    let stream = NoiseStream::derive(seed, problem.label(), &cfg.method.id());
    let mut spec = NoiseSpec::new(cfg.sigma2, cfg.sample_count, stream);

    let mut x = cfg.initial_point.materialize(n);
    let mut records: Vec<IterateRecord> = Vec::new();
    let mut mean_history: Vec<Vec<f64>> = Vec::new();
    let mut low_rank: Option<LowRankState> = None;
    let mut method_state = match cfg.method {
        Method::Bfgs => MethodState::Bfgs(BfgsState::initial(n)),
        _ => MethodState::Stateless,
    };

    let mut k = 0usize;
    let termination;
    loop {
        let batch = sample_batch(problem, &x, &mut spec)?;
        let true_norm = norm(&batch.true_grad);
        let mean_norm = norm(&batch.mean);
        let objective = problem.objective_value(&x)?;
        mean_history.push(batch.mean.clone());

        if true_norm <= cfg.tol {
            records.push(IterateRecord {
                k,
                iterate: x,
                true_norm,
                mean_norm,
                objective,
                step: None,
            });
            termination = TerminationReason::Tolerance;
            break;
        }
        if k == cfg.max_steps {
            records.push(IterateRecord {
                k,
                iterate: x,
                true_norm,
                mean_norm,
                objective,
                step: None,
            });
            termination = TerminationReason::MaxSteps;
            break;
        }

        let (direction, mut flags) = compute_direction(
            &cfg.method,
            k,
            &batch,
            low_rank.as_ref(),
            &mut method_state,
            &mean_history,
        );
        if norm(&direction) == 0.0 {
            records.push(IterateRecord {
                k,
                iterate: x,
                true_norm,
                mean_norm,
                objective,
                step: None,
            });
            termination = TerminationReason::BreakdownFallbackExhausted;
            break;
        }
        let alpha = exact_linesearch(problem, &x, &direction)?;
        flags.ascent = alpha < 0.0;

        records.push(IterateRecord {
            k,
            iterate: x.clone(),
            true_norm,
            mean_norm,
            objective,
            step: Some(StepRecord {
                direction: direction.clone(),
                alpha,
                flags,
            }),
        });

        low_rank = Some(LowRankState::after_step(
            direction.clone(),
            batch.mean,
            alpha,
        ));
        linalg::axpy(&mut x, alpha, &direction);
        k += 1;
    }

    Ok(RunTrace {
        config: cfg.clone(),
        problem_label: problem.label().to_string(),
        seed,
        records,
        termination,
    })
}

/// Cross product of (problem × config × replicate seed), executed with the
/// ambient rayon pool. Output order and content are identical whether run
/// serially or concurrently.
pub fn run_suite(
    problems: &[QuadraticProblem],
    configs: &[RunConfig],
) -> Result<Vec<RunTrace>, HarnessError> {
    let mut cells = Vec::new();
    for problem in problems {
        for cfg in configs {
            for &seed in &cfg.replicate_seeds {
                cells.push((problem, cfg, seed));
            }
        }
    }
    cells
        .par_iter()
        .map(|(problem, cfg, seed)| run_single(problem, cfg, *seed))
        .collect()
}

/// CSV serialization with header `k,true_norm,mean_norm,alpha,q,flags`.
/// Floats use the shortest round-trip scientific form; the terminal record
/// has empty `alpha` and `flags` fields.
pub fn trace_to_csv(trace: &RunTrace) -> String {
    let mut out = String::from("k,true_norm,mean_norm,alpha,q,flags\n");
    for rec in &trace.records {
        let (alpha, flags) = match &rec.step {
            Some(step) => (format!("{:e}", step.alpha), step.flags.render()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{:e},{:e},{},{:e},{}",
            rec.k, rec.true_norm, rec.mean_norm, alpha, rec.objective, flags
        )
        .unwrap();
    }
    out
}

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

/// `<problem>__<method>__s<seed>.csv` with the label sanitized to
/// `[A-Za-z0-9.-]` so the `__` separators stay unambiguous.
pub fn trace_file_name(problem_label: &str, method: &Method, seed: u64) -> String {
    format!(
        "{}__{}__s{}.csv",
        sanitize_label(problem_label),
        method.id(),
        seed
    )
}

pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SpdMatrix;
    use crate::problem::{gen_random, GenSpec};

    fn two_dim_problem() -> QuadraticProblem {
        let h = SpdMatrix::from_entries(2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        QuadraticProblem::new(h, vec![-2.0, -1.0], 0.0, "hand-2d").unwrap()
    }

    #[test]
    fn linesearch_hand_oracle() {
        let p = two_dim_problem();
        let alpha = exact_linesearch(&p, &[0.0, 0.0], &[2.0, 1.0]).unwrap();
        assert!((alpha - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn linesearch_newton_direction_gives_unit_step() {
        let p = two_dim_problem();
        let x = vec![0.3, -0.2];
        let g = p.true_gradient(&x).unwrap();
        let newton = p.hessian().cholesky().unwrap().solve(&g).unwrap();
        let dir: Vec<f64> = newton.iter().map(|v| -v).collect();
        let alpha = exact_linesearch(&p, &x, &dir).unwrap();
        assert!((alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linesearch_ascent_direction_gives_negative_alpha() {
        let p = two_dim_problem();
        let g = p.true_gradient(&[0.0, 0.0]).unwrap();
        let alpha = exact_linesearch(&p, &[0.0, 0.0], &g).unwrap();
        assert!(alpha < 0.0);
    }

    #[test]
    fn linesearch_zero_direction_is_error() {
        let p = two_dim_problem();
        assert!(matches!(
            exact_linesearch(&p, &[0.0, 0.0], &[0.0, 0.0]),
            Err(HarnessError::ZeroDirection)
        ));
    }

    #[test]
    fn cg_terminates_in_two_steps_on_hand_problem() {
        let p = two_dim_problem();
        let mut cfg = RunConfig::new(Method::SymCg);
        cfg.tol = 1e-10;
        let trace = run_single(&p, &cfg, 1).unwrap();
        assert_eq!(trace.termination, TerminationReason::Tolerance);
        let last = trace.records.last().unwrap();
        assert_eq!(last.k, 2);
        assert!((last.iterate[0] - 1.0).abs() <= 1e-10);
        assert!((last.iterate[1] - 1.0).abs() <= 1e-10);
        assert_eq!(crate::metrics::steps_to_tolerance(&trace, 1e-8), Some(2));
    }

    #[test]
    fn delta_window_indices() {
        let history: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        // k = 1: no i in max(0, k−K) ..= k−2 for any K
        assert!(delta_window(&history, 1, 0).is_empty());
        assert!(delta_window(&history, 1, 10).is_empty());
        // K = 0 keeps only the per-scenario term
        assert!(delta_window(&history, 5, 0).is_empty());
        // K = 10 at k = 12 spans i = 2..=10
        let w = delta_window(&history, 12, 10);
        assert_eq!(w.len(), 9);
        assert_eq!(w[0], vec![1.0]); // g_3 − g_2
        assert_eq!(w[8], vec![1.0]); // g_11 − g_10
        // K = 2 at k = 4 spans i = 2..=2
        assert_eq!(delta_window(&history, 4, 2).len(), 1);
    }

    #[test]
    fn sd_with_noise_hits_step_budget() {
        let p = gen_random(&GenSpec { n: 20, a: -1.0, b: 1.0, eps: 0.3, seed: 2 }).unwrap();
        let mut cfg = RunConfig::new(Method::Sd);
        cfg.tol = 1e-6;
        cfg.sigma2 = 1e-2;
        cfg.max_steps = 5;
        let trace = run_single(&p, &cfg, 7).unwrap();
        assert_eq!(trace.termination, TerminationReason::MaxSteps);
        assert_eq!(trace.records.last().unwrap().k, 5);
    }

    #[test]
    fn objective_never_increases_with_exact_linesearch() {
        let p = gen_random(&GenSpec { n: 15, a: -1.0, b: 1.0, eps: 0.3, seed: 5 }).unwrap();
        for method in [
            Method::Sd,
            Method::SymCg,
            Method::Bfgs,
            Method::MemorylessBfgs,
            Method::ChanceConstrained { beta: 0.0, window: 0 },
        ] {
            for sigma2 in [0.0, 1e-2] {
                let mut cfg = RunConfig::new(method.clone());
                cfg.sigma2 = sigma2;
                cfg.sample_count = 5;
                cfg.max_steps = 60;
                let trace = run_single(&p, &cfg, 3).unwrap();
                for pair in trace.records.windows(2) {
                    assert!(
                        pair[1].objective <= pair[0].objective + 1e-12,
                        "{} rose at k={} (sigma2={sigma2})",
                        cfg.method.id(),
                        pair[1].k
                    );
                }
            }
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let p = gen_random(&GenSpec { n: 10, a: -1.0, b: 1.0, eps: 0.3, seed: 9 }).unwrap();
        let mut cfg = RunConfig::new(Method::MemorylessBfgs);
        cfg.sigma2 = 1e-2;
        cfg.max_steps = 40;
        let t1 = run_single(&p, &cfg, 11).unwrap();
        let t2 = run_single(&p, &cfg, 11).unwrap();
        assert_eq!(trace_to_csv(&t1), trace_to_csv(&t2));
    }

    #[test]
    fn suite_cross_product_counts() {
        let p = gen_random(&GenSpec { n: 6, a: -1.0, b: 1.0, eps: 0.3, seed: 1 }).unwrap();
        let mut cfg_a = RunConfig::new(Method::Sd);
        cfg_a.max_steps = 5;
        cfg_a.replicate_seeds = vec![1, 2, 3];
        let mut cfg_b = RunConfig::new(Method::SymCg);
        cfg_b.max_steps = 5;
        cfg_b.replicate_seeds = vec![1, 2, 3];
        let traces = run_suite(&[p], &[cfg_a, cfg_b]).unwrap();
        assert_eq!(traces.len(), 6);

        let empty = run_suite(&[], &[]).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn suite_serial_equals_parallel() {
        let p = gen_random(&GenSpec { n: 8, a: -1.0, b: 1.0, eps: 0.3, seed: 4 }).unwrap();
        let mut cfg = RunConfig::new(Method::MemorylessBfgs);
        cfg.sigma2 = 1e-2;
        cfg.max_steps = 20;
        cfg.replicate_seeds = (1..=4).collect();

        let serial_pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let parallel_pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let problems = vec![p];
        let configs = vec![cfg];
        let serial = serial_pool.install(|| run_suite(&problems, &configs)).unwrap();
        let parallel = parallel_pool.install(|| run_suite(&problems, &configs)).unwrap();
        let render = |ts: &[RunTrace]| -> Vec<String> { ts.iter().map(trace_to_csv).collect() };
        assert_eq!(render(&serial), render(&parallel));
    }

    #[test]
    fn trace_csv_shape() {
        let p = two_dim_problem();
        let mut cfg = RunConfig::new(Method::SymCg);
        cfg.tol = 1e-10;
        let trace = run_single(&p, &cfg, 1).unwrap();
        let csv = trace_to_csv(&trace);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,true_norm,mean_norm,alpha,q,flags");
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), trace.records.len());
        // terminal row has empty alpha and flags
        let last: Vec<&str> = body.last().unwrap().split(',').collect();
        assert_eq!(last[3], "");
        assert_eq!(last[5], "");
    }

    #[test]
    fn file_names_are_sanitized() {
        let name = trace_file_name("weird label_x", &Method::Sd, 3);
        assert_eq!(name, "weird-label-x__sd__s3.csv");
    }
}
