//! The strictly convex quadratic objective `q(x) = ½ xᵀH x + cᵀx + d`, its
//! random generator, and a plain-text problem file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{self, LinalgError, SpdMatrix};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("hessian is not symmetric")]
    AsymmetricHessian,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("problem file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A strictly convex quadratic `q(x) = ½ xᵀH x + cᵀx + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    hessian: SpdMatrix,
    linear: Vec<f64>,
    constant: f64,
    label: String,
}

impl QuadraticProblem {
    /// Validates dimensions and positive definiteness (via Cholesky).
    pub fn new(
        hessian: SpdMatrix,
        linear: Vec<f64>,
        constant: f64,
        label: impl Into<String>,
    ) -> Result<Self, ProblemError> {
        if linear.len() != hessian.order() {
            return Err(ProblemError::DimensionMismatch {
                expected: hessian.order(),
                got: linear.len(),
            });
        }
        hessian.cholesky()?;
        Ok(QuadraticProblem {
            hessian,
            linear,
            constant,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hessian.order()
    }

    pub fn hessian(&self) -> &SpdMatrix {
        &self.hessian
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Exact noiseless gradient `H x + c`.
    pub fn true_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_dim(x)?;
        let mut g = self.hessian.matvec(x);
        linalg::axpy(&mut g, 1.0, &self.linear);
        Ok(g)
    }

    pub fn objective_value(&self, x: &[f64]) -> Result<f64, ProblemError> {
        self.check_dim(x)?;
        let hx = self.hessian.matvec(x);
        Ok(0.5 * linalg::dot(x, &hx) + linalg::dot(&self.linear, x) + self.constant)
    }

    /// The unique minimizer, i.e. the solution of `H x = −c`.
    pub fn exact_minimizer(&self) -> Result<Vec<f64>, ProblemError> {
        let factor = self.hessian.cholesky()?;
        let neg_c: Vec<f64> = self.linear.iter().map(|v| -v).collect();
        Ok(factor.solve(&neg_c)?)
    }

    /// Directional curvature `pᵀ H p`.
    pub fn curvature_along(&self, p: &[f64]) -> Result<f64, ProblemError> {
        self.check_dim(p)?;
        let hp = self.hessian.matvec(p);
        Ok(linalg::dot(p, &hp))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Parameters of the random generator: `H = QᵀQ + eps·diag(u)` with
/// `Q = a·J + (b−a)·U`, `c = u'` where `J` is the all-ones matrix and every
/// entry of `U`, `u`, `u'` is an independent Uniform(0,1] draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub seed: u64,
}

impl GenSpec {
    fn validate(&self) -> Result<(), ProblemError> {
        if self.n < 1 {
            return Err(ProblemError::InvalidSpec("n must be >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(ProblemError::InvalidSpec("eps must be > 0".into()));
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(ProblemError::InvalidSpec("a, b must be finite".into()));
        }
        Ok(())
    }
}

/// Uniform(0,1] draw; mapping the generator's native [0,1) draw through
/// `1 − s` keeps the diagonal perturbation strictly positive.
fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Deterministic random problem. The stream is ChaCha8 seeded with
/// `spec.seed`; draws are consumed in a pinned order — the n×n matrix `U`
/// row-major, then the n diagonal entries, then the n entries of `c`.
pub fn gen_random(spec: &GenSpec) -> Result<QuadraticProblem, ProblemError> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut q = vec![0.0; n * n];
    for entry in q.iter_mut() {
        *entry = spec.a + (spec.b - spec.a) * uniform01(&mut rng);
    }
    let diag: Vec<f64> = (0..n).map(|_| uniform01(&mut rng)).collect();
    let linear: Vec<f64> = (0..n).map(|_| uniform01(&mut rng)).collect();

    // H = QᵀQ + eps·diag(u); build the lower triangle once and mirror.
    let hessian = SpdMatrix::from_lower_fn(n, |i, j| {
        let mut sum = 0.0;
        for k in 0..n {
            sum += q[k * n + i] * q[k * n + j];
        }
        if i == j {
            sum += spec.eps * diag[i];
        }
        sum
    });

    let label = format!(
        "rand-n{}-a{}-b{}-eps{}-seed{}",
        n, spec.a, spec.b, spec.eps, spec.seed
    );
    QuadraticProblem::new(hessian, linear, 0.0, label)
}

/// Serializes a problem to the text format:
/// `n=<int>`, n rows of H, one row of c, `d=<float>`, `label=<text>`.
/// Floats are written with the shortest round-trip representation, so a
/// store→load cycle is bit-exact.
pub fn store_problem(p: &QuadraticProblem, path: &Path) -> Result<(), ProblemError> {
    let mut out = String::new();
    writeln!(out, "n={}", p.dim()).unwrap();
    for i in 0..p.dim() {
        let row: Vec<String> = p.hessian.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    let c_row: Vec<String> = p.linear.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{}", c_row.join(" ")).unwrap();
    writeln!(out, "d={}", p.constant).unwrap();
    writeln!(out, "label={}", p.label).unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the format written by [`store_problem`], rejecting asymmetric or
/// non-positive-definite Hessians.
pub fn load_problem(path: &Path) -> Result<QuadraticProblem, ProblemError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (lineno, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty problem file"))?;
    let n: usize = first
        .strip_prefix("n=")
        .ok_or_else(|| parse_err(lineno + 1, "expected n=<int>"))?
        .trim()
        .parse()
        .map_err(|e| parse_err(lineno + 1, format!("bad dimension: {e}")))?;
    if n < 1 {
        return Err(parse_err(lineno + 1, "dimension must be >= 1"));
    }

    let mut entries = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing hessian row"))?;
        let row = parse_floats(line, lineno + 1)?;
        if row.len() != n {
            return Err(parse_err(
                lineno + 1,
                format!("expected {n} entries, got {}", row.len()),
            ));
        }
        entries.extend(row);
    }
    let hessian = match SpdMatrix::from_entries(n, entries) {
        Ok(h) => h,
        Err(LinalgError::NotSymmetric { .. }) => return Err(ProblemError::AsymmetricHessian),
        Err(e) => return Err(e.into()),
    };

    let (lineno, line) = lines.next().ok_or_else(|| parse_err(0, "missing c row"))?;
    let linear = parse_floats(line, lineno + 1)?;
    if linear.len() != n {
        return Err(parse_err(
            lineno + 1,
            format!("expected {n} entries in c, got {}", linear.len()),
        ));
    }

    let (lineno, line) = lines.next().ok_or_else(|| parse_err(0, "missing d line"))?;
    let constant: f64 = line
        .strip_prefix("d=")
        .ok_or_else(|| parse_err(lineno + 1, "expected d=<float>"))?
        .trim()
        .parse()
        .map_err(|e| parse_err(lineno + 1, format!("bad constant: {e}")))?;

    let (lineno, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, "missing label line"))?;
    let label = line
        .strip_prefix("label=")
        .ok_or_else(|| parse_err(lineno + 1, "expected label=<text>"))?
        .to_string();

    QuadraticProblem::new(hessian, linear, constant, label)
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>, ProblemError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("bad float {tok:?}: {e}")))
        })
        .collect()
}

fn parse_err(line: usize, message: impl Into<String>) -> ProblemError {
    ProblemError::Parse {
        line,
        message: message.into(),
    }
}
