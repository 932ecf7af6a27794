//! Exact-arithmetic behavior of the direction engines: on a strictly convex
//! quadratic with exact linesearch and no noise they produce pairwise
//! parallel directions, orthogonal gradients, finite termination, the BFGS
//! matrix recovers the Hessian on the explored subspace, and the memoryless
//! matrix satisfies the secant identity.
//!
//! The identities are theorems of exact arithmetic; in f64 they survive only
//! while the Krylov process still resolves fresh directions. The dimensions
//! here sit inside that envelope (full-trajectory direction agreement decays
//! past n ≈ 8–15 at these tolerances; the acceptance suite probes the
//! boundary cases the contract pins).

mod common;

use ccqn::engines::{self, BfgsState, LowRankState};
use ccqn::harness::{exact_linesearch, run_single, Method, RunConfig, TerminationReason};
use ccqn::linalg::{dot, norm, sub};
use ccqn::problem::{gen_random, GenSpec};
use common::{cosine, exact_batch, lockstep_zero_noise};

fn problem(n: usize, seed: u64) -> ccqn::problem::QuadraticProblem {
    gen_random(&GenSpec { n, a: -1.0, b: 1.0, eps: 0.3, seed }).unwrap()
}

#[test]
fn directions_stay_pairwise_parallel_until_convergence() {
    for seed in 0..5 {
        let p = problem(8, seed);
        let run = lockstep_zero_noise(&p, 1e-10, 4 * p.dim());
        assert!(run.final_norm <= 1e-10, "seed {seed} did not converge");
        for (k, dirs) in run.directions.iter().enumerate() {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let c = cosine(&dirs[i], &dirs[j]).abs();
                    assert!(
                        c >= 1.0 - 1e-8,
                        "seed {seed} k={} engines {i},{j} cosine deficit {:e}",
                        k + 1,
                        1.0 - c
                    );
                }
            }
        }
    }
}

#[test]
fn gradients_form_an_orthogonal_basis() {
    for seed in [3u64, 11] {
        let p = problem(8, seed);
        let run = lockstep_zero_noise(&p, 1e-10, 4 * p.dim());
        assert!(run.final_norm <= 1e-10);
        let gs: Vec<&Vec<f64>> = run.gradients.iter().filter(|g| norm(g) > 1e-10).collect();
        for i in 0..gs.len() {
            for j in (i + 1)..gs.len() {
                let c = dot(gs[i], gs[j]).abs() / (norm(gs[i]) * norm(gs[j]));
                assert!(c <= 1e-8, "seed {seed}: gradients {i},{j} cosine {c:e}");
            }
        }
    }
}

#[test]
fn every_engine_terminates_within_n_plus_two_steps() {
    for &n in &[8usize, 12, 15] {
        for seed in 0..5 {
            let p = problem(n, seed);
            for method in [
                Method::SymCg,
                Method::Bfgs,
                Method::MemorylessBfgs,
                Method::ChanceConstrained { beta: 0.0, window: 0 },
            ] {
                let mut cfg = RunConfig::new(method);
                cfg.tol = 1e-8;
                cfg.max_steps = n + 2;
                cfg.sample_count = 1;
                let trace = run_single(&p, &cfg, 1).unwrap();
                assert_eq!(
                    trace.termination,
                    TerminationReason::Tolerance,
                    "{} n={n} seed={seed} stopped by {:?}",
                    cfg.method.id(),
                    trace.termination
                );
            }
        }
    }
}

#[test]
fn bfgs_recovers_hessian_curvature_on_explored_subspace() {
    let p = problem(10, 17);
    let n = p.dim();
    let h = p.hessian();

    // drive BFGS along its own directions
    let mut x = vec![0.0; n];
    let mut bfgs = BfgsState::initial(n);
    let mut state: Option<LowRankState> = None;
    let mut taken: Vec<Vec<f64>> = Vec::new();
    for k in 0..=(n + 2) {
        let g = p.true_gradient(&x).unwrap();
        if norm(&g) <= 1e-10 {
            break;
        }
        let batch = exact_batch(g);
        if k > 0 {
            bfgs = engines::bfgs_update(&bfgs, state.as_ref().unwrap(), &batch).unwrap();
            // B_k maps every explored direction the way H does
            for (i, p_i) in taken.iter().enumerate() {
                let bp = bfgs.matrix().matvec(p_i);
                let hp = h.matvec(p_i);
                let err = norm(&sub(&bp, &hp));
                assert!(
                    err <= 1e-8 * norm(&hp),
                    "k={k} i={i}: |B p − H p| = {err:e}"
                );
            }
        }
        let dir = bfgs.direction(&batch);
        let alpha = exact_linesearch(&p, &x, &dir).unwrap();
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += alpha * di;
        }
        state = Some(LowRankState::after_step(dir.clone(), batch.mean, alpha));
        taken.push(dir);
    }
    assert!(taken.len() >= 3, "run too short to be meaningful");
}

#[test]
fn memoryless_matrix_satisfies_secant_identity() {
    let p = problem(10, 23);
    let run = lockstep_zero_noise(&p, 1e-10, 4 * p.dim());
    assert!(run.final_norm <= 1e-10);
    // rebuild the memoryless matrix at each step and check α·B·p₋ = Δg
    for k in 1..run.taken.len() {
        let p_prev = &run.taken[k - 1];
        let g_prev = &run.gradients[k - 1];
        let g_cur = &run.gradients[k];
        let alpha = -dot(g_prev, p_prev) / p.curvature_along(p_prev).unwrap();
        let state = LowRankState::after_step(p_prev.clone(), g_prev.clone(), alpha);
        let rho = state.secant_rho.expect("secant scalar defined");
        let delta = sub(g_cur, g_prev);

        let mut b = ccqn::linalg::SpdMatrix::identity(p.dim());
        b.add_scaled_outer(p_prev, -1.0 / dot(p_prev, p_prev));
        b.add_scaled_outer(&delta, rho);
        let lhs: Vec<f64> = b.matvec(p_prev).iter().map(|v| alpha * v).collect();
        let err = norm(&sub(&lhs, &delta));
        assert!(err <= 1e-10 * norm(&delta), "k={k}: secant residual {err:e}");
    }
}
