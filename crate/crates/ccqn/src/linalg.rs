//! Dense symmetric positive-definite linear algebra: Cholesky factorization,
//! triangular solves, and low-rank inverse application via the capacitance
//! (Woodbury) identity.
//!
//! Everything here is dense and allocation-per-call; problem sizes stay in the
//! hundreds, so simplicity wins over cleverness.

use thiserror::Error;

/// Any denominator whose magnitude falls below this factor times the product
/// of its operand norms is treated as degenerate.
pub const DENOM_GUARD: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    /// A pivot fell below the tolerance `1e-13 × max diagonal`; the input is
    /// not numerically positive definite.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Entries supplied to an SPD constructor were not exactly symmetric.
    #[error("matrix entries are not symmetric at ({i},{j})")]
    NotSymmetric { i: usize, j: usize },
    /// The small capacitance system of a low-rank update is singular; the
    /// update has pushed the matrix out of the positive-definite regime.
    #[error("singular capacitance system in low-rank inverse application")]
    SingularCapacitance,
}

/// Dense symmetric matrix intended to be positive definite.
///
/// Symmetry is exact by construction: every constructor either validates
/// `entries[i][j] == entries[j][i]` bitwise or mirrors one triangle.
/// Positive definiteness is certified later, by [`SpdMatrix::cholesky`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    n: usize,
    entries: Vec<f64>, // row-major, n*n
}

impl SpdMatrix {
    /// Builds from row-major entries, requiring exact symmetry.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != n * n {
            return Err(LinalgError::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(LinalgError::NotSymmetric { i, j });
                }
            }
        }
        Ok(SpdMatrix { n, entries })
    }

    /// Builds from the lower triangle produced by `f(i, j)` (`j <= i`),
    /// mirroring it so symmetry holds exactly.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        SpdMatrix { n, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_lower_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// Adds `s · v vᵀ` in place, keeping exact symmetry.
    pub fn add_scaled_outer(&mut self, v: &[f64], s: f64) {
        assert_eq!(v.len(), self.n, "outer-product dimension mismatch");
        let n = self.n;
        for i in 0..n {
            for j in 0..=i {
                let upd = s * v[i] * v[j];
                self.entries[i * n + j] += upd;
                if i != j {
                    self.entries[j * n + i] = self.entries[i * n + j];
                }
            }
        }
    }

    /// Cholesky factorization `A = L Lᵀ`.
    ///
    /// Fails with [`LinalgError::NotPositiveDefinite`] when a pivot drops to
    /// or below `1e-13 × max diagonal entry`, which distinguishes genuine
    /// indefiniteness from roundoff.
    pub fn cholesky(&self) -> Result<SpdFactor, LinalgError> {
        let n = self.n;
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(self.entry(i, i).abs()));
        let pivot_tol = 1e-13 * max_diag;
        let mut lower = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.entry(i, j);
                for k in 0..j {
                    sum -= lower[i * n + k] * lower[j * n + k];
                }
                if i == j {
                    if sum <= pivot_tol {
                        return Err(LinalgError::NotPositiveDefinite {
                            index: i,
                            pivot: sum,
                        });
                    }
                    lower[i * n + j] = sum.sqrt();
                } else {
                    lower[i * n + j] = sum / lower[j * n + j];
                }
            }
        }
        Ok(SpdFactor { n, lower })
    }
}

/// Lower-triangular Cholesky factor of an [`SpdMatrix`].
#[derive(Debug, Clone)]
pub struct SpdFactor {
    n: usize,
    lower: Vec<f64>, // row-major, strictly the lower triangle is populated
}

impl SpdFactor {
    /// Factor of the identity; cheap and exact.
    pub fn identity(n: usize) -> Self {
        let mut lower = vec![0.0; n * n];
        for i in 0..n {
            lower[i * n + i] = 1.0;
        }
        SpdFactor { n, lower }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` where `A = L Lᵀ` is the factored matrix.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        // forward: L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.lower[i * n + k] * y[k];
            }
            y[i] = sum / self.lower[i * n + i];
        }
        // backward: Lᵀ x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= self.lower[k * n + i] * x[k];
            }
            x[i] = sum / self.lower[i * n + i];
        }
        Ok(x)
    }

    /// Rebuilds `L Lᵀ`; used by callers that want to verify the factorization.
    pub fn reconstruct(&self) -> SpdMatrix {
        let n = self.n;
        SpdMatrix::from_lower_fn(n, |i, j| {
            (0..=j).map(|k| self.lower[i * n + k] * self.lower[j * n + k]).sum()
        })
    }

    pub fn lower_entry(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.n + j]
    }
}

/// Applies `(A + U D Uᵀ)⁻¹ b` through the factor of `A` and an m×m
/// capacitance solve, where `U` has the columns `u_cols` and `D` is the
/// row-major m×m symmetric matrix `d`.
///
/// With zero columns this is a plain solve. Fails with
/// [`LinalgError::SingularCapacitance`] when the capacitance system (or `D`
/// itself) is singular within tolerance, i.e. the update left the
/// positive-definite interval.
pub fn woodbury_apply(
    factor: &SpdFactor,
    u_cols: &[Vec<f64>],
    d: &[f64],
    b: &[f64],
) -> Result<Vec<f64>, LinalgError> {
    let n = factor.order();
    let m = u_cols.len();
    if d.len() != m * m {
        return Err(LinalgError::DimensionMismatch {
            expected: m * m,
            got: d.len(),
        });
    }
    for col in u_cols {
        if col.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: col.len(),
            });
        }
    }
    let x0 = factor.solve(b)?;
    if m == 0 {
        return Ok(x0);
    }

    let d_inv = invert_small(m, d).map_err(|_| LinalgError::SingularCapacitance)?;
    // y_j = A⁻¹ u_j
    let ys: Vec<Vec<f64>> = u_cols
        .iter()
        .map(|u| factor.solve(u))
        .collect::<Result<_, _>>()?;
    // capacitance C = D⁻¹ + Uᵀ A⁻¹ U
    let mut cap = d_inv;
    for i in 0..m {
        for j in 0..m {
            cap[i * m + j] += dot(&u_cols[i], &ys[j]);
        }
    }
    let rhs: Vec<f64> = u_cols.iter().map(|u| dot(u, &x0)).collect();
    let z = solve_small(m, &cap, &rhs).map_err(|_| LinalgError::SingularCapacitance)?;

    let mut x = x0;
    for j in 0..m {
        axpy(&mut x, -z[j], &ys[j]);
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting for the tiny (m ≤ 2 in
/// practice) capacitance systems. Singularity is a pivot below
/// `1e-13 × max |entry|`.
fn solve_small(m: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>, ()> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let scale = a.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let tol = 1e-13 * scale;
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&r1, &r2| {
                a[r1 * m + col]
                    .abs()
                    .partial_cmp(&a[r2 * m + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * m + col].abs() <= tol {
            return Err(());
        }
        if pivot_row != col {
            for j in 0..m {
                a.swap(col * m + j, pivot_row * m + j);
            }
            b.swap(col, pivot_row);
        }
        for row in (col + 1)..m {
            let f = a[row * m + col] / a[col * m + col];
            for j in col..m {
                a[row * m + j] -= f * a[col * m + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut sum = b[i];
        for j in (i + 1)..m {
            sum -= a[i * m + j] * x[j];
        }
        x[i] = sum / a[i * m + i];
    }
    Ok(x)
}

fn invert_small(m: usize, a: &[f64]) -> Result<Vec<f64>, ()> {
    let mut inv = vec![0.0; m * m];
    for col in 0..m {
        let mut e = vec![0.0; m];
        e[col] = 1.0;
        let x = solve_small(m, a, &e)?;
        for row in 0..m {
            inv[row * m + col] = x[row];
        }
    }
    Ok(inv)
}

// Small vector helpers shared across the crate.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s · x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}
