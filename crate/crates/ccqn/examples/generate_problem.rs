//! Generate a random strictly convex quadratic, inspect it, and round-trip
//! it through the problem file format.
//!
//! ```text
//! cargo run --release --example generate_problem
//! ```

use ccqn::linalg::norm;
use ccqn::problem::{gen_random, load_problem, store_problem, GenSpec};

fn main() {
    // the benchmark defaults: entries of the base matrix in (-1, 1],
    // diagonal perturbation 0.3
    let spec = GenSpec { n: 100, a: -1.0, b: 1.0, eps: 0.3, seed: 1 };
    let problem = gen_random(&spec).expect("valid spec");
    println!("generated {} (n = {})", problem.label(), problem.dim());

    let xstar = problem.exact_minimizer().expect("SPD hessian");
    let g = problem.true_gradient(&xstar).unwrap();
    println!("minimizer found, |grad| at x* = {:.3e}", norm(&g));
    println!(
        "q(0) = {:.6}, q(x*) = {:.6}",
        problem.objective_value(&vec![0.0; 100]).unwrap(),
        problem.objective_value(&xstar).unwrap()
    );

    let dir = std::env::temp_dir();
    let path = dir.join("ccqn_example_problem.qp");
    store_problem(&problem, &path).expect("writable temp dir");
    let reloaded = load_problem(&path).expect("parseable file");
    assert_eq!(problem, reloaded);
    println!("stored and reloaded bit-exactly from {}", path.display());

    // same seed, same problem
    let again = gen_random(&spec).unwrap();
    assert_eq!(problem, again);
    println!("regeneration with the same seed is identical");
}
