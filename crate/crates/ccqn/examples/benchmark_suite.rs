//! A small end-to-end benchmark: several methods on one noisy problem over
//! a few seeds, aggregated into performance profiles and an averaged
//! gradient-norm curve — the in-process equivalent of the
//! `gen → run → profile → trace` command pipeline.
//!
//! ```text
//! cargo run --release --example benchmark_suite
//! ```

use std::collections::BTreeMap;

use ccqn::harness::{run_suite, Method, RunConfig};
use ccqn::metrics::{
    average_log_norm, min_norm, performance_profile, ProfileMetric, TraceSummary,
};
use ccqn::problem::{gen_random, GenSpec};

fn main() {
    let problem = gen_random(&GenSpec { n: 40, a: -1.0, b: 1.0, eps: 0.3, seed: 2 }).unwrap();
    let methods = [
        Method::Sd,
        Method::SymCg,
        Method::Bfgs,
        Method::MemorylessBfgs,
        Method::ChanceConstrained { beta: 0.0, window: 0 },
        Method::ChanceConstrained { beta: 0.05, window: 10 },
    ];
    let seeds: Vec<u64> = (1..=5).collect();
    let configs: Vec<RunConfig> = methods
        .iter()
        .map(|m| {
            let mut cfg = RunConfig::new(m.clone());
            cfg.tol = 1e-8;
            cfg.sigma2 = 1e-2;
            cfg.sample_count = 20;
            cfg.max_steps = 150;
            cfg.replicate_seeds = seeds.clone();
            cfg
        })
        .collect();

    let traces = run_suite(&[problem], &configs).expect("suite runs");
    println!("ran {} traces ({} methods × {} seeds)\n", traces.len(), methods.len(), seeds.len());

    println!("minimum true gradient norm per method (mean over seeds):");
    let mut mins: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for trace in &traces {
        mins.entry(trace.config.method.id()).or_default().push(min_norm(trace));
    }
    for (method, values) in &mins {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("  {method:<16} {mean:.3e}");
    }

    let summaries: Vec<TraceSummary> = traces.iter().map(TraceSummary::from_trace).collect();
    let profile = performance_profile(&summaries, ProfileMetric::MinNorm).unwrap();
    println!("\nmin-norm performance profile (fraction within τ× the best):");
    print!("  {:<16}", "tau");
    for tau in [1usize, 2, 5, 10, 20] {
        print!("{tau:>8}");
    }
    println!();
    for (mi, method) in profile.methods.iter().enumerate() {
        print!("  {method:<16}");
        for tau in [1usize, 2, 5, 10, 20] {
            print!("{:>8.2}", profile.fractions[mi][tau - 1]);
        }
        println!();
    }

    println!("\naverage log10 gradient norm, steepest descent vs memoryless BFGS:");
    let series_for = |id: &str| -> Vec<Vec<f64>> {
        summaries
            .iter()
            .filter(|s| s.method == id)
            .map(|s| s.true_norms.clone())
            .collect()
    };
    let sd_curve = average_log_norm(&series_for("sd"));
    let ml_curve = average_log_norm(&series_for("mlbfgs"));
    println!("  {:>5} {:>10} {:>10}", "k", "sd", "mlbfgs");
    for k in (0..=150).step_by(25) {
        let at = |c: &[f64]| c.get(k).copied().unwrap_or(*c.last().unwrap());
        println!("  {k:>5} {:>10.3} {:>10.3}", at(&sd_curve), at(&ml_curve));
    }
}
