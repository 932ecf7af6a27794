//! Shared helpers for the integration suites: an LU-based dense oracle that
//! is independent of the library's Cholesky path, plus a lockstep driver
//! that evaluates every engine on one shared zero-noise trajectory.

#![allow(dead_code)]

use ccqn::engines::{self, BfgsState, LowRankState};
use ccqn::linalg::{dot, norm, SpdMatrix};
use ccqn::noise::GradientBatch;
use ccqn::problem::QuadraticProblem;

/// Dense LU solve with partial pivoting; the test-side reference for every
/// "matches dense inversion" assertion.
pub fn lu_solve(n: usize, a_row_major: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a_row_major.len(), n * n);
    assert_eq!(b.len(), n);
    let mut a = a_row_major.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().partial_cmp(&a[s * n + col].abs()).unwrap())
            .unwrap();
        assert!(a[pivot * n + col].abs() > 0.0, "singular oracle system");
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            x.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            x[i] -= a[i * n + j] * x[j];
        }
        x[i] /= a[i * n + i];
    }
    x
}

pub fn spd_rows(m: &SpdMatrix) -> Vec<f64> {
    let n = m.order();
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        rows.extend_from_slice(m.row(i));
    }
    rows
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

pub fn exact_batch(g: Vec<f64>) -> GradientBatch {
    GradientBatch {
        samples: vec![g.clone()],
        mean: g.clone(),
        true_grad: g,
    }
}

/// Directions of all four non-trivial engines at each iterate of one shared
/// exact-arithmetic trajectory (advanced along the symmetric-CG direction).
pub struct Lockstep {
    /// `directions[k]` = [cg, bfgs, mlbfgs, ccqn] at iteration k ≥ 1.
    pub directions: Vec<[Vec<f64>; 4]>,
    /// Mean (= true) gradients g_0 .. g_end.
    pub gradients: Vec<Vec<f64>>,
    /// Directions actually taken (CG's), one per executed step.
    pub taken: Vec<Vec<f64>>,
    /// Final true gradient norm.
    pub final_norm: f64,
}

pub fn lockstep_zero_noise(problem: &QuadraticProblem, tol: f64, max_steps: usize) -> Lockstep {
    let n = problem.dim();
    let mut x = vec![0.0; n];
    let mut gradients = Vec::new();
    let mut taken = Vec::new();
    let mut directions = Vec::new();

    let mut bfgs = BfgsState::initial(n);
    let mut state: Option<LowRankState> = None;
    let mut final_norm = f64::NAN;

    for k in 0..=max_steps {
        let g = problem.true_gradient(&x).unwrap();
        final_norm = norm(&g);
        gradients.push(g.clone());
        if final_norm <= tol {
            break;
        }
        let batch = exact_batch(g);
        let dir = if k == 0 {
            engines::sd_direction(&batch)
        } else {
            let prev = state.as_ref().unwrap();
            let cg = engines::symcg_direction(prev, &batch).expect("cg direction");
            bfgs = engines::bfgs_update(&bfgs, prev, &batch).expect("bfgs update");
            let bf = bfgs.direction(&batch);
            let ml = engines::mlbfgs_direction(prev, &batch).expect("mlbfgs direction");
            let inst =
                ccqn::chance::build_instance(&[], prev, &batch, 0.0, ccqn::chance::DEFAULT_DELTA_SCALE)
                    .expect("ccqn instance");
            let cq = ccqn::chance::solve_scenario(&inst).expect("ccqn solve").direction;
            directions.push([cg.clone(), bf, ml, cq]);
            cg
        };
        let alpha = ccqn::harness::exact_linesearch(problem, &x, &dir).expect("linesearch");
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += alpha * di;
        }
        state = Some(LowRankState::after_step(dir.clone(), batch.mean, alpha));
        taken.push(dir);
    }

    Lockstep { directions, gradients, taken, final_norm }
}
