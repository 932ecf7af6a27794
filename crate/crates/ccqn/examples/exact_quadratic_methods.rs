//! With exact gradients and exact linesearch, symmetric CG, BFGS,
//! memoryless BFGS, and the chance-constrained direction model all generate
//! the same search directions and terminate in at most n steps.
//!
//! ```text
//! cargo run --release --example exact_quadratic_methods
//! ```

use ccqn::chance::{build_instance, solve_scenario, DEFAULT_DELTA_SCALE};
use ccqn::engines::{self, BfgsState, LowRankState};
use ccqn::harness::{exact_linesearch, run_single, Method, RunConfig};
use ccqn::linalg::{dot, norm};
use ccqn::noise::GradientBatch;
use ccqn::problem::{gen_random, GenSpec};

fn exact_batch(g: Vec<f64>) -> GradientBatch {
    GradientBatch { samples: vec![g.clone()], mean: g.clone(), true_grad: g }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn main() {
    let n = 8;
    let problem = gen_random(&GenSpec { n, a: -1.0, b: 1.0, eps: 0.3, seed: 3 }).unwrap();
    println!("one shared trajectory on {} (n = {n}):", problem.label());

    let mut x = vec![0.0; n];
    let mut bfgs = BfgsState::initial(n);
    let mut state: Option<LowRankState> = None;
    for k in 0.. {
        let g = problem.true_gradient(&x).unwrap();
        if norm(&g) <= 1e-10 {
            println!("terminated at k = {k} with |g| = {:.2e}", norm(&g));
            break;
        }
        let batch = exact_batch(g.clone());
        let dir = if k == 0 {
            println!("k=0  all engines take the steepest-descent step");
            engines::sd_direction(&batch)
        } else {
            let prev = state.as_ref().unwrap();
            let cg = engines::symcg_direction(prev, &batch).unwrap();
            bfgs = engines::bfgs_update(&bfgs, prev, &batch).unwrap();
            let bf = bfgs.direction(&batch);
            let ml = engines::mlbfgs_direction(prev, &batch).unwrap();
            let inst = build_instance(&[], prev, &batch, 0.0, DEFAULT_DELTA_SCALE).unwrap();
            let cq = solve_scenario(&inst).unwrap().direction;
            println!(
                "k={k}  |g| = {:.2e}  cosines vs CG: bfgs {:+.12}, mlbfgs {:+.12}, ccqn {:+.12}",
                norm(&g),
                cosine(&bf, &cg),
                cosine(&ml, &cg),
                cosine(&cq, &cg)
            );
            cg
        };
        let alpha = exact_linesearch(&problem, &x, &dir).unwrap();
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += alpha * di;
        }
        state = Some(LowRankState::after_step(dir, batch.mean, alpha));
    }

    println!("\nsteps to reach |g| <= 1e-8, per engine and dimension:");
    println!("{:>4} {:>6} {:>6} {:>8} {:>8}", "n", "cg", "bfgs", "mlbfgs", "ccqn");
    for n in [5usize, 8, 12, 15] {
        let problem = gen_random(&GenSpec { n, a: -1.0, b: 1.0, eps: 0.3, seed: 3 }).unwrap();
        let mut row = format!("{n:>4}");
        for method in [
            Method::SymCg,
            Method::Bfgs,
            Method::MemorylessBfgs,
            Method::ChanceConstrained { beta: 0.0, window: 0 },
        ] {
            let mut cfg = RunConfig::new(method);
            cfg.tol = 1e-8;
            cfg.max_steps = 4 * n;
            cfg.sample_count = 1;
            let trace = run_single(&problem, &cfg, 1).unwrap();
            row.push_str(&format!("{:>7}", trace.records.last().unwrap().k));
        }
        println!("{row}");
    }
}
