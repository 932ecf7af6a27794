//! Search-direction engines for minimizing strictly convex quadratics whose
//! gradients are only observed through noise, plus a reproducible experiment
//! harness.
//!
//! The crate provides:
//!
//! * [`problem`] — the quadratic objective, a seeded random generator, and a
//!   plain-text problem file format;
//! * [`noise`] — Gaussian gradient sampling with deterministic, forkable
//!   streams, and the descent-margin bound;
//! * [`engines`] — steepest descent, symmetric CG, BFGS, and memoryless BFGS
//!   direction engines driven by batch-mean gradients;
//! * [`chance`] — the chance-constrained quasi-Newton (CCQN) direction
//!   subproblem, solved exactly by a one-dimensional piecewise-quadratic
//!   breakpoint scan combined with scenario-subset enumeration;
//! * [`harness`] — the outer iteration with exact linesearch on the true
//!   quadratic, trace recording, and deterministic multi-seed suites;
//! * [`metrics`] — steps-to-tolerance, minimum gradient norms,
//!   average-log-norm curves, and performance profiles;
//! * [`cli`] — the `gen | run | profile | trace` command surface used by the
//!   thin binary.
//!
//! The `examples/` directory walks through each capability; start with
//! `cargo run --release --example exact_quadratic_methods`.

pub mod chance;
pub mod cli;
pub mod engines;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod problem;
