//! Post-processing over run traces: steps-to-tolerance, minimum gradient
//! norms, average-log-norm curves, and performance profiles.
//!
//! A performance-profile cell is one (problem, seed) pair. Within a cell the
//! best method sets the reference; a method's curve value at the integer
//! threshold τ is the fraction of cells where its metric is within τ times
//! the reference. Cells where no method produced a finite metric are
//! dropped; a method without a finite metric in a surviving cell counts as
//! failing every threshold there.

use std::collections::BTreeMap;
use std::path::Path;

use std::fmt::Write as _;

use thiserror::Error;

use crate::harness::RunTrace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no results to profile")]
    EmptyResults,
    #[error("trace file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The integer thresholds 1..=20 of every profile.
pub const PROFILE_THRESHOLDS: std::ops::RangeInclusive<usize> = 1..=20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileMetric {
    /// Smallest step index whose true gradient norm is ≤ tol.
    StepsToTolerance { tol: f64 },
    /// Minimum true gradient norm over the trace.
    MinNorm,
}

/// The per-trace data metrics consume: identity of the cell plus the true
/// gradient norm series.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub true_norms: Vec<f64>,
}

impl TraceSummary {
    pub fn from_trace(trace: &RunTrace) -> Self {
        TraceSummary {
            problem: trace.problem_label.clone(),
            method: trace.config.method.id(),
            seed: trace.seed,
            true_norms: trace.true_norms(),
        }
    }

    /// Reads a trace CSV written by the harness; the cell identity comes
    /// from the `<problem>__<method>__s<seed>.csv` file name.
    pub fn from_csv_file(path: &Path) -> Result<Self, MetricsError> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| parse_err(0, "unreadable file name"))?;
        let parts: Vec<&str> = stem.split("__").collect();
        if parts.len() != 3 || !parts[2].starts_with('s') {
            return Err(parse_err(
                0,
                format!("file name {stem:?} is not <problem>__<method>__s<seed>"),
            ));
        }
        let seed: u64 = parts[2][1..]
            .parse()
            .map_err(|e| parse_err(0, format!("bad seed in file name: {e}")))?;

        let text = std::fs::read_to_string(path)?;
        let mut lines = lines_of(&text);
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty trace file"))?;
        if header != "k,true_norm,mean_norm,alpha,q,flags" {
            return Err(parse_err(1, "unexpected trace header"));
        }
        let mut true_norms = Vec::new();
        for (lineno, line) in lines {
            let mut fields = line.split(',');
            let _k = fields.next();
            let norm_field = fields
                .next()
                .ok_or_else(|| parse_err(lineno, "missing true_norm column"))?;
            let value: f64 = norm_field
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad true_norm: {e}")))?;
            true_norms.push(value);
        }
        Ok(TraceSummary {
            problem: parts[0].to_string(),
            method: parts[1].to_string(),
            seed,
            true_norms,
        })
    }

    pub fn metric(&self, metric: ProfileMetric) -> Option<f64> {
        match metric {
            ProfileMetric::StepsToTolerance { tol } => {
                steps_to_tolerance_norms(&self.true_norms, tol).map(|k| k as f64)
            }
            ProfileMetric::MinNorm => Some(min_norm_of(&self.true_norms)),
        }
    }
}

fn lines_of(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l))
}

fn parse_err(line: usize, message: impl Into<String>) -> MetricsError {
    MetricsError::Parse { line, message: message.into() }
}

/// Smallest k with `norms[k] <= tol`, if any.
pub fn steps_to_tolerance_norms(norms: &[f64], tol: f64) -> Option<usize> {
    norms.iter().position(|&v| v <= tol)
}

pub fn steps_to_tolerance(trace: &RunTrace, tol: f64) -> Option<usize> {
    steps_to_tolerance_norms(&trace.true_norms(), tol)
}

fn min_norm_of(norms: &[f64]) -> f64 {
    norms.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn min_norm(trace: &RunTrace) -> f64 {
    min_norm_of(&trace.true_norms())
}

/// Performance-profile curves over integer thresholds 1..=20.
#[derive(Debug, Clone)]
pub struct PerfProfile {
    pub metric: ProfileMetric,
    /// Method ids in output order (lexicographic).
    pub methods: Vec<String>,
    /// `fractions[m][t]` = fraction of cells where method m is within
    /// threshold `t+1` of the cell's best metric.
    pub fractions: Vec<Vec<f64>>,
}

impl PerfProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,tau,fraction\n");
        for (m, method) in self.methods.iter().enumerate() {
            for (t, frac) in self.fractions[m].iter().enumerate() {
                writeln!(out, "{},{},{}", method, t + 1, frac).unwrap();
            }
        }
        out
    }
}

/// Builds the profile from one summary per (problem, method, seed).
pub fn performance_profile(
    results: &[TraceSummary],
    metric: ProfileMetric,
) -> Result<PerfProfile, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut methods: Vec<String> = results.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();

    // cells keyed by (problem, seed); value = per-method metric
    let mut cells: BTreeMap<(String, u64), BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for r in results {
        cells
            .entry((r.problem.clone(), r.seed))
            .or_default()
            .insert(r.method.clone(), r.metric(metric));
    }

    let mut counts = vec![vec![0usize; 20]; methods.len()];
    let mut kept_cells = 0usize;
    for per_method in cells.values() {
        let best = per_method
            .values()
            .filter_map(|v| *v)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            // no method produced a finite metric here; drop the cell
            continue;
        }
        kept_cells += 1;
        for (m, method) in methods.iter().enumerate() {
            let value = per_method.get(method).copied().flatten();
            if let Some(v) = value {
                for tau in PROFILE_THRESHOLDS {
                    if v <= tau as f64 * best {
                        counts[m][tau - 1] += 1;
                    }
                }
            }
        }
    }
    if kept_cells == 0 {
        return Err(MetricsError::EmptyResults);
    }
    let fractions = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / kept_cells as f64).collect())
        .collect();
    Ok(PerfProfile { metric, methods, fractions })
}

/// Per-step mean of `log10(true_norm)` across seeds for one
/// (problem, method) group; traces that terminated early are held at their
/// final value.
pub fn average_log_norm(norm_series: &[Vec<f64>]) -> Vec<f64> {
    let max_len = norm_series.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(max_len);
    for k in 0..max_len {
        let mut acc = 0.0;
        for series in norm_series {
            let v = if k < series.len() {
                series[k]
            } else {
                *series.last().expect("nonempty trace")
            };
            acc += v.log10();
        }
        out.push(acc / norm_series.len() as f64);
    }
    out
}

/// CSV for the averaged curves, `method,k,mean_log10_norm`, methods in
/// lexicographic order.
pub fn curves_to_csv(groups: &BTreeMap<String, Vec<Vec<f64>>>) -> String {
    let mut out = String::from("method,k,mean_log10_norm\n");
    for (method, series) in groups {
        for (k, v) in average_log_norm(series).iter().enumerate() {
            writeln!(out, "{},{},{:e}", method, k, v).unwrap();
        }
    }
    out
}
