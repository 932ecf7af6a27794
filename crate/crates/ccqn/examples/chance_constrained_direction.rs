//! One chance-constrained direction solve, end to end: build the instance
//! from a noisy batch, minimize the piecewise-quadratic scenario objective
//! exactly, optionally exclude scenarios, and recover ρ and the step
//! direction from the optimal γ.
//!
//! ```text
//! cargo run --release --example chance_constrained_direction
//! ```

use ccqn::chance::{
    brute_force_oracle, build_instance, objective_curve, recover_direction, solve_chance,
    solve_scenario, DEFAULT_DELTA_SCALE,
};
use ccqn::engines::{sd_direction, LowRankState};
use ccqn::harness::exact_linesearch;
use ccqn::linalg::{dot, norm};
use ccqn::noise::{sample_batch, NoiseSpec, NoiseStream};
use ccqn::problem::{gen_random, GenSpec};

fn main() {
    let n = 10;
    let problem = gen_random(&GenSpec { n, a: -1.0, b: 1.0, eps: 0.3, seed: 4 }).unwrap();
    let mut spec = NoiseSpec::new(1e-2, 20, NoiseStream::derive(7, problem.label(), "demo"));

    // one steepest-descent step to create history
    let x0 = vec![0.0; n];
    let b0 = sample_batch(&problem, &x0, &mut spec).unwrap();
    let p0 = sd_direction(&b0);
    let alpha = exact_linesearch(&problem, &x0, &p0).unwrap();
    let x1: Vec<f64> = x0.iter().zip(&p0).map(|(x, d)| x + alpha * d).collect();
    let state = LowRankState::after_step(p0, b0.mean, alpha);

    let batch = sample_batch(&problem, &x1, &mut spec).unwrap();
    let inst = build_instance(&[], &state, &batch, 0.05, DEFAULT_DELTA_SCALE).unwrap();
    println!(
        "instance: {} scenarios, {} objective terms, secant rho = {:.4}",
        inst.sample_count(),
        inst.term_count(),
        state.secant_rho.unwrap()
    );

    let active: Vec<usize> = (0..inst.sample_count()).collect();
    let curve = objective_curve(&inst, &active);
    println!(
        "objective curve: lower bound {:.4}, {} breakpoints, F(0) = {:.4e}",
        curve.lower(),
        curve.breakpoints().len(),
        curve.eval(0.0)
    );

    // scenario approach: every scenario stays active
    let scenario = solve_scenario(&inst).unwrap();
    println!(
        "\nscenario solve:  gamma = {:+.5}, rho = {:+.5}, objective = {:.4e}",
        scenario.gamma, scenario.rho, scenario.objective
    );

    // chance solve at 5%: one scenario may be dropped
    let chance = solve_chance(&inst, 0.05).unwrap();
    println!(
        "chance solve:    gamma = {:+.5}, rho = {:+.5}, objective = {:.4e}, excluded {:?} (exact: {})",
        chance.gamma, chance.rho, chance.objective, chance.excluded, chance.exact
    );
    let oracle = brute_force_oracle(&inst, 0.05, 4000);
    println!("grid+enumeration oracle objective: {:.4e}", oracle);

    // the direction the harness would step along
    let dir = recover_direction(chance.gamma, &batch, &state).unwrap();
    assert!(norm(&ccqn::linalg::sub(&dir, &chance.direction)) <= 1e-12 * norm(&dir));
    let g_true = problem.true_gradient(&x1).unwrap();
    println!(
        "\nrecovered direction: |p| = {:.4}, true-gradient descent test gᵀp = {:+.4e}",
        norm(&dir),
        dot(&g_true, &dir)
    );
}
