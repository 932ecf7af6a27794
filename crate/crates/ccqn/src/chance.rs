//! The chance-constrained quasi-Newton (CCQN) direction subproblem.
//!
//! At iteration k the direction is `p(γ) = u_ω + γ·v_ω` per noisy-gradient
//! scenario ω, and the model picks γ to minimize
//! `F(γ) = Σ_i (max over active ω of |Δgᵢᵀ p(γ)|)²` over the half-line where
//! every active scenario matrix stays positive definite. Up to `⌊S·β⌋`
//! scenarios may be excluded. `F` is a convex piecewise quadratic in the
//! single variable γ, so the scenario problem is solved exactly by a
//! breakpoint scan, and the chance problem by enumerating exclusion subsets
//! (with a documented greedy fallback past an enumeration cap).

use thiserror::Error;

use crate::engines::LowRankState;
use crate::linalg::{self, dot, norm, woodbury_apply, SpdFactor, DENOM_GUARD};
use crate::noise::GradientBatch;

/// Default scale for the strict-bound margin: each scenario's lower bound is
/// `ℓ_raw + scale·(1 + |ℓ_raw|)`.
pub const DEFAULT_DELTA_SCALE: f64 = 1e-8;

/// Exclusion-subset enumeration cap; beyond it the chance solve degrades to
/// the greedy fallback and the solution is flagged non-exact.
pub const ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum CcqnError {
    /// A scaling denominator (secant scalar, scenario curvature, or the
    /// γ→ρ recovery denominator) degenerated; the caller falls back to a
    /// steepest-descent step.
    #[error("degenerate denominator in chance-constrained direction model")]
    DegenerateDenominator,
    /// More scenarios broke down (lost positive definiteness or degenerated)
    /// than the exclusion budget can absorb.
    #[error("{} scenarios broke down, budget {budget}", broken.len())]
    ScenarioBreakdown { broken: Vec<usize>, budget: usize },
}

/// Per-scenario data of the direction subproblem: the affine map
/// coefficients of `Δgᵢᵀ p_ω(γ)` for every window index, and the scenario's
/// γ lower bound.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `Δgᵢᵀ u_ω` per history index.
    pub a_hist: Vec<f64>,
    /// `Δgᵢᵀ v_ω` per history index.
    pub b_hist: Vec<f64>,
    /// `q_ωᵀ u_ω` for the scenario's own gradient difference.
    pub a_last: f64,
    /// `q_ωᵀ v_ω`.
    pub b_last: f64,
    /// Lower bound on γ (strict bound plus margin).
    pub lower: f64,
    /// False when the scenario broke down; such scenarios are always
    /// excluded.
    pub valid: bool,
}

/// The direction model for the mean gradient: `p(γ) = u + γ·v` and the
/// quadratic form `q̄ᵀB̄⁻¹q̄` used by the γ→ρ recovery.
#[derive(Debug, Clone)]
struct MeanModel {
    u: Vec<f64>,
    v: Vec<f64>,
    quad: f64,
}

/// Problem data for one CCQN direction solve.
#[derive(Debug, Clone)]
pub struct CcqnInstance {
    history_deltas: Vec<Vec<f64>>,
    scenarios: Vec<Scenario>,
    beta: f64,
    delta_scale: f64,
    mean: MeanModel,
}

/// Optimizer of one CCQN direction solve.
#[derive(Debug, Clone)]
pub struct CcqnSolution {
    pub gamma: f64,
    /// ρ recovered from γ through the mean-gradient matrix.
    pub rho: f64,
    /// The direction the harness steps along, assembled from the mean
    /// gradient.
    pub direction: Vec<f64>,
    /// Optimal envelope value per window index.
    pub t_values: Vec<f64>,
    pub objective: f64,
    /// Excluded scenario indices, ascending.
    pub excluded: Vec<usize>,
    /// False when the greedy fallback (rather than exhaustive enumeration)
    /// produced the exclusion set.
    pub exact: bool,
}

/// `⌊S·β⌋` with an absolute 1e-9 slack so that budgets like S·(1/S) are not
/// lost to binary representation dust.
pub fn exclusion_budget(sample_count: usize, beta: f64) -> usize {
    (sample_count as f64 * beta + 1e-9).floor() as usize
}

struct ScenarioModel {
    u: Vec<f64>,
    v: Vec<f64>,
    quad: f64,
}

/// Builds `u = −B⁻¹g`, `v = −(qᵀB⁻¹g)·B⁻¹q` and `quad = qᵀB⁻¹q` for
/// `B = I − p₋p₋ᵀ/(p₋ᵀp₋) + ρ̂·qqᵀ`, `q = g − g₋`.
fn scenario_model(
    gradient: &[f64],
    prev: &LowRankState,
    rho: f64,
    identity: &SpdFactor,
) -> Result<ScenarioModel, CcqnError> {
    let p = &prev.prev_direction;
    let q = linalg::sub(gradient, &prev.prev_mean_grad);
    if dot(&q, p).abs() <= DENOM_GUARD * norm(&q) * norm(p) {
        return Err(CcqnError::DegenerateDenominator);
    }
    let pp = dot(p, p);
    let d = vec![-1.0 / pp, 0.0, 0.0, rho];
    let cols = [p.clone(), q.clone()];
    let s = woodbury_apply(identity, &cols, &d, gradient)
        .map_err(|_| CcqnError::DegenerateDenominator)?;
    let h = woodbury_apply(identity, &cols, &d, &q)
        .map_err(|_| CcqnError::DegenerateDenominator)?;
    let quad = dot(&q, &h);
    if !(quad > 0.0) {
        return Err(CcqnError::DegenerateDenominator);
    }
    let u = linalg::scaled(&s, -1.0);
    let v = linalg::scaled(&h, -dot(&q, &s));
    Ok(ScenarioModel { u, v, quad })
}

/// Builds the instance from the window of past mean-gradient differences,
/// the previous step's state, and the scenario batch.
///
/// Scenarios that break down are marked invalid (force-excluded). If more of
/// them break than `⌊S·β⌋` can absorb, the whole step fails and the caller
/// falls back to steepest descent.
pub fn build_instance(
    history_deltas: &[Vec<f64>],
    prev: &LowRankState,
    batch: &GradientBatch,
    beta: f64,
    delta_scale: f64,
) -> Result<CcqnInstance, CcqnError> {
    assert!((0.0..1.0).contains(&beta), "beta must lie in [0,1)");
    assert!(delta_scale > 0.0, "delta margin must be positive");
    let rho = match prev.secant_rho {
        Some(r) if r > 0.0 => r,
        _ => return Err(CcqnError::DegenerateDenominator),
    };
    let n = prev.prev_direction.len();
    let identity = SpdFactor::identity(n);

    let mut scenarios = Vec::with_capacity(batch.samples.len());
    let mut broken = Vec::new();
    for (idx, sample) in batch.samples.iter().enumerate() {
        match scenario_model(sample, prev, rho, &identity) {
            Ok(model) => {
                let q = linalg::sub(sample, &prev.prev_mean_grad);
                let lower_raw = -1.0 / model.quad;
                let lower = lower_raw + delta_scale * (1.0 + lower_raw.abs());
                let a_hist: Vec<f64> =
                    history_deltas.iter().map(|d| dot(d, &model.u)).collect();
                let b_hist: Vec<f64> =
                    history_deltas.iter().map(|d| dot(d, &model.v)).collect();
                scenarios.push(Scenario {
                    a_hist,
                    b_hist,
                    a_last: dot(&q, &model.u),
                    b_last: dot(&q, &model.v),
                    lower,
                    valid: true,
                });
            }
            Err(_) => {
                broken.push(idx);
                scenarios.push(Scenario {
                    a_hist: vec![0.0; history_deltas.len()],
                    b_hist: vec![0.0; history_deltas.len()],
                    a_last: 0.0,
                    b_last: 0.0,
                    lower: f64::NEG_INFINITY,
                    valid: false,
                });
            }
        }
    }
    let budget = exclusion_budget(batch.samples.len(), beta);
    if broken.len() > budget {
        return Err(CcqnError::ScenarioBreakdown { broken, budget });
    }

    let mean_model = scenario_model(&batch.mean, prev, rho, &identity)?;
    Ok(CcqnInstance {
        history_deltas: history_deltas.to_vec(),
        scenarios,
        beta,
        delta_scale,
        mean: MeanModel {
            u: mean_model.u,
            v: mean_model.v,
            quad: mean_model.quad,
        },
    })
}

impl CcqnInstance {
    pub fn sample_count(&self) -> usize {
        self.scenarios.len()
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    /// Window indices contributing to the objective: the history deltas plus
    /// the per-scenario term.
    pub fn term_count(&self) -> usize {
        self.history_deltas.len() + 1
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta_scale(&self) -> f64 {
        self.delta_scale
    }

    fn valid_indices(&self) -> Vec<usize> {
        (0..self.scenarios.len())
            .filter(|&i| self.scenarios[i].valid)
            .collect()
    }

    fn forced_excluded(&self) -> Vec<usize> {
        (0..self.scenarios.len())
            .filter(|&i| !self.scenarios[i].valid)
            .collect()
    }
}

/// Convex piecewise-quadratic objective on `[lower, ∞)`: the sum over window
/// indices of the squared envelope `max over scenarios of |a + γ·b|`.
#[derive(Debug, Clone)]
pub struct ObjectiveCurve {
    lower: f64,
    /// Sorted envelope breakpoints strictly inside `(lower, ∞)`.
    breakpoints: Vec<f64>,
    /// `terms[i][s] = (a, b)` for window index i and active scenario s.
    terms: Vec<Vec<(f64, f64)>>,
}

impl ObjectiveCurve {
    /// Builds the curve from explicit per-term affine coefficients. Every
    /// term row must be nonempty.
    pub fn new(lower: f64, terms: Vec<Vec<(f64, f64)>>) -> Self {
        assert!(terms.iter().all(|row| !row.is_empty()), "empty term row");
        let mut breakpoints = Vec::new();
        for row in &terms {
            for (i, &(a1, b1)) in row.iter().enumerate() {
                if b1 != 0.0 {
                    breakpoints.push(-a1 / b1);
                }
                for &(a2, b2) in &row[i + 1..] {
                    if b1 != b2 {
                        breakpoints.push((a2 - a1) / (b1 - b2));
                    }
                    if b1 + b2 != 0.0 {
                        breakpoints.push(-(a1 + a2) / (b1 + b2));
                    }
                }
            }
        }
        breakpoints.retain(|g| g.is_finite() && *g > lower);
        breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breakpoints.dedup();
        ObjectiveCurve { lower, breakpoints, terms }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Envelope value `max |a + γ·b|` per window index.
    pub fn envelopes(&self, gamma: f64) -> Vec<f64> {
        self.terms
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(a, b)| (a + gamma * b).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn eval(&self, gamma: f64) -> f64 {
        self.envelopes(gamma).iter().map(|t| t * t).sum()
    }

    /// Exact global minimizer over `[lower, ∞)`: scans the intervals between
    /// consecutive breakpoints, clamping each interval's unconstrained
    /// quadratic minimizer. Ties resolve to the smallest feasible γ.
    pub fn minimize(&self) -> (f64, f64) {
        let mut best_gamma = self.lower;
        let mut best_value = self.eval(self.lower);

        let mut bounds = Vec::with_capacity(self.breakpoints.len() + 1);
        bounds.push(self.lower);
        bounds.extend_from_slice(&self.breakpoints);

        for (i, &lo) in bounds.iter().enumerate() {
            let hi = bounds.get(i + 1).copied();
            let sample = match hi {
                Some(h) => 0.5 * (lo + h),
                None => lo + 1.0 + 0.5 * lo.abs(),
            };
            // On this interval each envelope is a single |affine|, so F is
            // one quadratic c₂γ² + c₁γ + c₀; pick the attaining scenario at
            // the sample point.
            let mut c2 = 0.0;
            let mut c1 = 0.0;
            for row in &self.terms {
                let &(a, b) = row
                    .iter()
                    .max_by(|(a1, b1), (a2, b2)| {
                        let v1 = (a1 + sample * b1).abs();
                        let v2 = (a2 + sample * b2).abs();
                        v1.partial_cmp(&v2).unwrap()
                    })
                    .unwrap();
                c2 += b * b;
                c1 += 2.0 * a * b;
            }
            let candidate = if c2 > 0.0 {
                let unconstrained = -c1 / (2.0 * c2);
                match hi {
                    Some(h) => unconstrained.clamp(lo, h),
                    None => unconstrained.max(lo),
                }
            } else if c1 >= 0.0 {
                lo
            } else {
                // Nondecreasing convexity makes a strictly decreasing flat
                // piece impossible; clamp to the interval if it shows up as
                // roundoff.
                hi.unwrap_or(lo)
            };
            let value = self.eval(candidate);
            if value < best_value {
                best_value = value;
                best_gamma = candidate;
            }
        }
        (best_gamma, best_value)
    }
}

/// The objective restricted to the given active scenarios, as a convex
/// piecewise-quadratic description over `[L, ∞)` with
/// `L = max over active of the scenario lower bounds`.
pub fn objective_curve(inst: &CcqnInstance, active: &[usize]) -> ObjectiveCurve {
    assert!(!active.is_empty(), "active scenario set must be nonempty");
    let lower = active
        .iter()
        .map(|&s| inst.scenarios[s].lower)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut terms = Vec::with_capacity(inst.term_count());
    for i in 0..inst.history_deltas.len() {
        terms.push(
            active
                .iter()
                .map(|&s| (inst.scenarios[s].a_hist[i], inst.scenarios[s].b_hist[i]))
                .collect(),
        );
    }
    terms.push(
        active
            .iter()
            .map(|&s| (inst.scenarios[s].a_last, inst.scenarios[s].b_last))
            .collect(),
    );
    ObjectiveCurve::new(lower, terms)
}

fn assemble_solution(
    inst: &CcqnInstance,
    gamma: f64,
    objective: f64,
    t_values: Vec<f64>,
    mut excluded: Vec<usize>,
    exact: bool,
) -> Result<CcqnSolution, CcqnError> {
    excluded.sort_unstable();
    let rho = gamma_to_rho_quad(gamma, inst.mean.quad)?;
    let mut direction = inst.mean.u.clone();
    linalg::axpy(&mut direction, gamma, &inst.mean.v);
    Ok(CcqnSolution {
        gamma,
        rho,
        direction,
        t_values,
        objective,
        excluded,
        exact,
    })
}

/// The β = 0 specialization: every valid scenario stays active and the
/// convex one-dimensional curve is minimized exactly.
pub fn solve_scenario(inst: &CcqnInstance) -> Result<CcqnSolution, CcqnError> {
    let active = inst.valid_indices();
    let curve = objective_curve(inst, &active);
    let (gamma, objective) = curve.minimize();
    assemble_solution(
        inst,
        gamma,
        objective,
        curve.envelopes(gamma),
        inst.forced_excluded(),
        true,
    )
}

/// Exact optimum over all exclusion sets of size ≤ `⌊S·β⌋` when the subset
/// count stays under [`ENUMERATION_CAP`]; otherwise a greedy fallback that
/// repeatedly drops the scenario whose removal most reduces the optimum,
/// with the result flagged non-exact. Excluded scenarios contribute no
/// constraints.
pub fn solve_chance(inst: &CcqnInstance, beta: f64) -> Result<CcqnSolution, CcqnError> {
    let budget = exclusion_budget(inst.sample_count(), beta);
    let forced = inst.forced_excluded();
    if forced.len() > budget {
        return Err(CcqnError::ScenarioBreakdown { broken: forced, budget });
    }
    let valid = inst.valid_indices();
    let free_budget = (budget - forced.len()).min(valid.len().saturating_sub(1));
    if free_budget == 0 {
        return solve_scenario(inst);
    }

    if subset_count(valid.len(), free_budget) <= ENUMERATION_CAP {
        let mut best: Option<(f64, f64, Vec<f64>, Vec<usize>)> = None;
        for dropped in subsets_up_to(&valid, free_budget) {
            let active: Vec<usize> = valid
                .iter()
                .copied()
                .filter(|i| !dropped.contains(i))
                .collect();
            let curve = objective_curve(inst, &active);
            let (gamma, value) = curve.minimize();
            if best.as_ref().is_none_or(|(_, bv, _, _)| value < *bv) {
                best = Some((gamma, value, curve.envelopes(gamma), dropped));
            }
        }
        let (gamma, value, ts, dropped) = best.expect("nonempty subset enumeration");
        let mut excluded = forced;
        excluded.extend(dropped);
        assemble_solution(inst, gamma, value, ts, excluded, true)
    } else {
        let mut active = valid;
        let mut excluded = forced;
        let curve = objective_curve(inst, &active);
        let (mut gamma, mut value) = curve.minimize();
        let mut ts = curve.envelopes(gamma);
        for _ in 0..free_budget {
            if active.len() == 1 {
                break;
            }
            let mut improvement: Option<(usize, f64, f64, Vec<f64>)> = None;
            for (pos, &cand) in active.iter().enumerate() {
                let trial: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|&i| i != cand)
                    .collect();
                let curve = objective_curve(inst, &trial);
                let (g, v) = curve.minimize();
                if v < improvement.as_ref().map_or(value, |(_, _, bv, _)| *bv) {
                    improvement = Some((pos, g, v, curve.envelopes(g)));
                }
            }
            match improvement {
                Some((pos, g, v, t)) => {
                    excluded.push(active.remove(pos));
                    gamma = g;
                    value = v;
                    ts = t;
                }
                None => break,
            }
        }
        assemble_solution(inst, gamma, value, ts, excluded, false)
    }
}

/// `Σ_{j=0..=m} C(n, j)`, saturating.
fn subset_count(n: usize, m: usize) -> u64 {
    let mut total: u64 = 0;
    let mut choose: u64 = 1; // C(n, 0)
    for j in 0..=m.min(n) {
        total = total.saturating_add(choose);
        if total > ENUMERATION_CAP {
            return u64::MAX;
        }
        choose = choose
            .saturating_mul((n - j) as u64)
            .checked_div((j + 1) as u64)
            .unwrap_or(u64::MAX);
    }
    total
}

/// All subsets of `items` of size 0..=m, sizes ascending, lexicographic
/// within a size.
fn subsets_up_to(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = vec![Vec::new()];
    for size in 1..=m.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        'combinations: loop {
            out.push(idx.iter().map(|&i| items[i]).collect());
            let mut i = size;
            while i > 0 {
                i -= 1;
                if idx[i] != i + n - size {
                    idx[i] += 1;
                    for j in (i + 1)..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    continue 'combinations;
                }
            }
            break;
        }
    }
    out
}

/// ρ recovered from γ through the quadratic form `q̄ᵀB̄⁻¹q̄` supplied by
/// `mean_solve`: `ρ = γ / (1 + γ·quad)`.
pub fn gamma_to_rho(
    gamma: f64,
    mean_delta: &[f64],
    mean_solve: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<f64, CcqnError> {
    let quad = dot(mean_delta, &mean_solve(mean_delta));
    gamma_to_rho_quad(gamma, quad)
}

/// Scalar core of [`gamma_to_rho`].
pub fn gamma_to_rho_quad(gamma: f64, quad: f64) -> Result<f64, CcqnError> {
    let denom = 1.0 + gamma * quad;
    if denom.abs() <= DENOM_GUARD * (1.0 + (gamma * quad).abs()) {
        return Err(CcqnError::DegenerateDenominator);
    }
    Ok(gamma / denom)
}

/// One direction of the γ↔ρ-offset bijection: `γ = −r/(1 + r·quad)` for the
/// offset `r = ρ − ρ̂`.
pub fn rho_offset_to_gamma(offset: f64, quad: f64) -> Result<f64, CcqnError> {
    let denom = 1.0 + offset * quad;
    if denom.abs() <= DENOM_GUARD * (1.0 + (offset * quad).abs()) {
        return Err(CcqnError::DegenerateDenominator);
    }
    Ok(-offset / denom)
}

/// The inverse direction: `ρ − ρ̂ = −γ/(1 + γ·quad)`.
pub fn gamma_to_rho_offset(gamma: f64, quad: f64) -> Result<f64, CcqnError> {
    let denom = 1.0 + gamma * quad;
    if denom.abs() <= DENOM_GUARD * (1.0 + (gamma * quad).abs()) {
        return Err(CcqnError::DegenerateDenominator);
    }
    Ok(-gamma / denom)
}

/// Rebuilds the mean-gradient direction `p = u + γ·v` from scratch; equal to
/// the direction stored in a [`CcqnSolution`] for the same γ.
pub fn recover_direction(
    gamma: f64,
    batch: &GradientBatch,
    prev: &LowRankState,
) -> Result<Vec<f64>, CcqnError> {
    let rho = match prev.secant_rho {
        Some(r) if r > 0.0 => r,
        _ => return Err(CcqnError::DegenerateDenominator),
    };
    let identity = SpdFactor::identity(prev.prev_direction.len());
    let model = scenario_model(&batch.mean, prev, rho, &identity)?;
    let mut direction = model.u;
    linalg::axpy(&mut direction, gamma, &model.v);
    Ok(direction)
}

/// Test oracle: minimum objective over a dense γ grid crossed with
/// exhaustive exclusion-subset enumeration. The grid starts on
/// `[L, L + 1 + |L|]`, doubles its span while the argmin sits on the right
/// edge (valid bracketing by convexity), then refines twice around the
/// coarse argmin. Pure function evaluation; shares nothing with the
/// breakpoint scan.
pub fn brute_force_oracle(inst: &CcqnInstance, beta: f64, grid: usize) -> f64 {
    assert!(grid >= 8, "grid resolution too coarse");
    let budget = exclusion_budget(inst.sample_count(), beta);
    let valid = inst.valid_indices();
    let free_budget = budget
        .saturating_sub(inst.forced_excluded().len())
        .min(valid.len().saturating_sub(1));

    let eval = |active: &[usize], gamma: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..inst.history_deltas.len() {
            let t = active
                .iter()
                .map(|&s| {
                    (inst.scenarios[s].a_hist[i] + gamma * inst.scenarios[s].b_hist[i]).abs()
                })
                .fold(0.0, f64::max);
            total += t * t;
        }
        let t = active
            .iter()
            .map(|&s| (inst.scenarios[s].a_last + gamma * inst.scenarios[s].b_last).abs())
            .fold(0.0, f64::max);
        total + t * t
    };

    let mut best = f64::INFINITY;
    for dropped in subsets_up_to(&valid, free_budget) {
        let active: Vec<usize> = valid
            .iter()
            .copied()
            .filter(|i| !dropped.contains(i))
            .collect();
        let lower = active
            .iter()
            .map(|&s| inst.scenarios[s].lower)
            .fold(f64::NEG_INFINITY, f64::max);

        let scan = |lo: f64, hi: f64| -> (f64, usize) {
            let mut arg = 0;
            let mut val = f64::INFINITY;
            for j in 0..=grid {
                let g = lo + (hi - lo) * j as f64 / grid as f64;
                let v = eval(&active, g);
                if v < val {
                    val = v;
                    arg = j;
                }
            }
            (val, arg)
        };

        let mut lo = lower;
        let mut hi = lower + 1.0 + lower.abs();
        let (mut val, mut arg) = scan(lo, hi);
        for _ in 0..60 {
            if arg < grid {
                break;
            }
            hi = lo + 2.0 * (hi - lo);
            let r = scan(lo, hi);
            val = r.0;
            arg = r.1;
        }
        // two refinement passes around the coarse argmin
        for _ in 0..2 {
            let cell = (hi - lo) / grid as f64;
            let center = lo + cell * arg as f64;
            lo = (center - cell).max(lower);
            hi = center + cell;
            let r = scan(lo, hi);
            val = r.0;
            arg = r.1;
        }
        best = best.min(val);
    }
    best
}
