//! The four classical direction engines: steepest descent, symmetric CG,
//! BFGS, and memoryless BFGS.
//!
//! Every engine consumes the batch mean gradient. In exact arithmetic with
//! exact linesearch all of them generate pairwise-parallel directions and
//! terminate in at most n steps on an n-dimensional quadratic; under noise
//! they behave very differently, which is the whole point of the harness.

use thiserror::Error;

use crate::linalg::{self, dot, norm, woodbury_apply, LinalgError, SpdFactor, SpdMatrix, DENOM_GUARD};
use crate::noise::GradientBatch;

#[derive(Debug, Error)]
pub enum EngineError {
    /// A curvature or scaling denominator fell under the safeguard
    /// (`1e-14 ×` the product of its operand norms). Callers restart the
    /// step with steepest descent.
    #[error("degenerate denominator in direction computation")]
    DegenerateDenominator,
    /// A BFGS curvature denominator is too small to update safely; the
    /// caller keeps the previous matrix for this step.
    #[error("curvature breakdown in BFGS update")]
    CurvatureBreakdown,
    /// The updated matrix lost positive definiteness (certified by
    /// refactorization); the caller keeps the previous matrix.
    #[error("BFGS update lost positive definiteness")]
    NotPositiveDefinite,
}

/// Per-method memory carried between iterations: the previous direction,
/// previous mean gradient, previous step length, and the secant scalar
/// `ρ̂ = −1/(α·gᵀp)` (None when its denominator is degenerate).
#[derive(Debug, Clone)]
pub struct LowRankState {
    pub prev_direction: Vec<f64>,
    pub prev_mean_grad: Vec<f64>,
    pub prev_alpha: f64,
    pub secant_rho: Option<f64>,
}

impl LowRankState {
    /// Builds the state after a step with direction `p`, mean gradient `g`
    /// (at the point the step started from), and step length `alpha`.
    pub fn after_step(prev_direction: Vec<f64>, prev_mean_grad: Vec<f64>, prev_alpha: f64) -> Self {
        let gp = dot(&prev_mean_grad, &prev_direction);
        let denom = prev_alpha * gp;
        let guard = DENOM_GUARD
            * prev_alpha.abs().max(1.0)
            * norm(&prev_mean_grad)
            * norm(&prev_direction);
        let secant_rho = if denom.abs() > guard { Some(-1.0 / denom) } else { None };
        LowRankState { prev_direction, prev_mean_grad, prev_alpha, secant_rho }
    }
}

/// Steepest descent: `p = −ḡ`.
pub fn sd_direction(batch: &GradientBatch) -> Vec<f64> {
    linalg::scaled(&batch.mean, -1.0)
}

/// Symmetric CG direction: solves `B p = −ḡ` for the rank-two matrix
/// `B = (I − a g pᵀ)(I − a p gᵀ)`, `a = 1/(g₋ᵀp₋)`, by composing the two
/// rank-one inverse applications. Reduces to the classical CG recursion
/// when the new gradient is orthogonal to the previous direction.
pub fn symcg_direction(
    state: &LowRankState,
    batch: &GradientBatch,
) -> Result<Vec<f64>, EngineError> {
    let g = &batch.mean;
    let p = &state.prev_direction;
    let g_prev = &state.prev_mean_grad;

    let e = dot(g_prev, p);
    if e.abs() <= DENOM_GUARD * norm(g_prev) * norm(p) {
        return Err(EngineError::DegenerateDenominator);
    }
    let w = dot(g, p);
    // e − w = −(g − g₋)ᵀ p₋ is the second inverse-application denominator.
    let diff = linalg::sub(g, g_prev);
    if (e - w).abs() <= DENOM_GUARD * norm(&diff) * norm(p) {
        return Err(EngineError::DegenerateDenominator);
    }

    // B⁻¹(−g) = −(e/(e−w)) g − (e‖g‖²/(e−w)²) p
    let s = e / (e - w);
    let mut dir = linalg::scaled(g, -s);
    linalg::axpy(&mut dir, -s * s * dot(g, g) / e, p);
    Ok(dir)
}

/// Dense BFGS state: the matrix and its refreshed Cholesky factor.
#[derive(Debug, Clone)]
pub struct BfgsState {
    b_matrix: SpdMatrix,
    factor: SpdFactor,
}

impl BfgsState {
    /// `B₀ = I`.
    pub fn initial(n: usize) -> Self {
        BfgsState {
            b_matrix: SpdMatrix::identity(n),
            factor: SpdFactor::identity(n),
        }
    }

    pub fn matrix(&self) -> &SpdMatrix {
        &self.b_matrix
    }

    /// Solves `B p = −ḡ`.
    pub fn direction(&self, batch: &GradientBatch) -> Vec<f64> {
        let neg_g = linalg::scaled(&batch.mean, -1.0);
        self.factor.solve(&neg_g).expect("state dimension matches batch")
    }
}

/// One BFGS update
/// `B ← B + g₋g₋ᵀ/(g₋ᵀp₋) + ΔgΔgᵀ/(α₋·Δgᵀp₋)`, `Δg = ḡ − g₋`,
/// with all gradients taken as batch means. The update is certified
/// positive definite by refactorization; on failure the caller keeps the
/// previous state.
pub fn bfgs_update(
    state: &BfgsState,
    prev: &LowRankState,
    batch: &GradientBatch,
) -> Result<BfgsState, EngineError> {
    let g_prev = &prev.prev_mean_grad;
    let p_prev = &prev.prev_direction;
    let delta = linalg::sub(&batch.mean, g_prev);

    let d1 = dot(g_prev, p_prev);
    if d1.abs() <= DENOM_GUARD * norm(g_prev) * norm(p_prev) {
        return Err(EngineError::CurvatureBreakdown);
    }
    let curv = dot(&delta, p_prev);
    if curv.abs() <= DENOM_GUARD * norm(&delta) * norm(p_prev) {
        return Err(EngineError::CurvatureBreakdown);
    }
    let d2 = prev.prev_alpha * curv;
    if d2 == 0.0 {
        return Err(EngineError::CurvatureBreakdown);
    }

    let mut b = state.b_matrix.clone();
    b.add_scaled_outer(g_prev, 1.0 / d1);
    b.add_scaled_outer(&delta, 1.0 / d2);
    let factor = b.cholesky().map_err(|e| match e {
        LinalgError::NotPositiveDefinite { .. } => EngineError::NotPositiveDefinite,
        other => panic!("unexpected factorization error: {other}"),
    })?;
    Ok(BfgsState { b_matrix: b, factor })
}

/// Memoryless BFGS direction: solves `B p = −ḡ` for
/// `B = I − p₋p₋ᵀ/(p₋ᵀp₋) + ρ̂·ΔgΔgᵀ` through a rank-two capacitance
/// system on the identity base.
pub fn mlbfgs_direction(
    state: &LowRankState,
    batch: &GradientBatch,
) -> Result<Vec<f64>, EngineError> {
    let p = &state.prev_direction;
    let rho = match state.secant_rho {
        Some(r) if r > 0.0 => r,
        _ => return Err(EngineError::DegenerateDenominator),
    };
    let pp = dot(p, p);
    if pp == 0.0 {
        return Err(EngineError::DegenerateDenominator);
    }
    let delta = linalg::sub(&batch.mean, &state.prev_mean_grad);
    // Nonsingularity needs Δgᵀp₋ bounded away from zero.
    if dot(&delta, p).abs() <= DENOM_GUARD * norm(&delta) * norm(p) {
        return Err(EngineError::DegenerateDenominator);
    }

    let neg_g = linalg::scaled(&batch.mean, -1.0);
    let d = vec![-1.0 / pp, 0.0, 0.0, rho];
    woodbury_apply(&SpdFactor::identity(p.len()), &[p.clone(), delta], &d, &neg_g)
        .map_err(|_| EngineError::DegenerateDenominator)
}
