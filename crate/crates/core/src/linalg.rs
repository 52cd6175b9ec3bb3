//! Dense symmetric matrices and the Gaussian identities the filter is built on.
//!
//! Everything here works on small dense matrices (the models of interest are
//! one or two dimensional) and is a pure function of its inputs.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Absolute tolerance (scaled by the largest entry) for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance for algebraic identity checks.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Pivots smaller than this (relative to the largest) mark a matrix as singular.
const SINGULAR_PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("matrix is not positive definite")]
    NotPd,
    #[error("A + B is singular, the quadratic forms cannot be combined")]
    SingularCombination,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A square matrix that is kept exactly symmetric.
///
/// Constructors reject inputs that are not symmetric to within
/// [`SYMMETRY_TOL`] and then store `(M + Mᵀ)/2`, so arithmetic drift never
/// accumulates.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, AlgebraError> {
        if m.nrows() != m.ncols() {
            return Err(AlgebraError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let asym = max_asymmetry(&m);
        let scale = m.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(AlgebraError::NotSymmetric(asym));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without checking; use for results of arithmetic that is
    /// symmetric in exact arithmetic.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_row_slice(dim: usize, values: &[f64]) -> Result<Self, AlgebraError> {
        if values.len() != dim * dim {
            return Err(AlgebraError::DimensionMismatch {
                expected: dim * dim,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix(DMatrix::identity(dim, dim) * scale)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    /// 1×1 matrix.
    pub fn scalar(value: f64) -> Self {
        SymMatrix(DMatrix::from_element(1, 1, value))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>, AlgebraError> {
        Cholesky::new(self.0.clone()).ok_or(AlgebraError::NotPd)
    }

    pub fn is_pd(&self) -> bool {
        Cholesky::new(self.0.clone()).is_some()
    }

    pub fn inverse_pd(&self) -> Result<SymMatrix, AlgebraError> {
        Ok(SymMatrix::symmetrize(self.cholesky()?.inverse()))
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 + &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    /// `B M Bᵀ` for a (possibly rectangular) `B`.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(b * &self.0 * b.transpose())
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.0.clone().symmetric_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self.dim() {
            1 => self.0[(0, 0)],
            2 => {
                let (a, b, d) = (self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 1)]);
                let mid = 0.5 * (a + d);
                let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mid - rad
            }
            _ => self.eigenvalues().min(),
        }
    }

    /// Upper triangle in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn from_upper_triangle(dim: usize, values: &[f64]) -> Result<Self, AlgebraError> {
        if values.len() != dim * (dim + 1) / 2 {
            return Err(AlgebraError::DimensionMismatch {
                expected: dim * (dim + 1) / 2,
                found: values.len(),
            });
        }
        let mut m = DMatrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                m[(i, j)] = values[k];
                m[(j, i)] = values[k];
                k += 1;
            }
        }
        Ok(SymMatrix(m))
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Result of writing `‖x−a‖²_A + ‖x−b‖²_B` as a constant plus one quadratic
/// form in `x`.
#[derive(Clone, Debug)]
pub struct QuadFormDecomposition {
    /// `A (A+B)⁻¹ B`
    pub cross_weight: SymMatrix,
    /// `(A+B)⁻¹ (A a + B b)`
    pub combined_center: DVector<f64>,
    /// `A + B`
    pub combined_weight: SymMatrix,
    /// `a − b`
    pub offset: DVector<f64>,
}

impl QuadFormDecomposition {
    /// The `x`-independent term `‖a−b‖²_{A(A+B)⁻¹B}`.
    pub fn cross_term(&self) -> f64 {
        self.cross_weight.quad_form(&self.offset)
    }

    /// Right-hand side of the identity evaluated at `x`.
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.cross_term() + self.combined_weight.quad_form(&(x - &self.combined_center))
    }
}

/// Completes the square in `‖x−a‖²_A + ‖x−b‖²_B`.
///
/// `A` and `B` may individually be singular; only `A + B` has to be
/// invertible.
pub fn complete_squares(
    a: &DVector<f64>,
    weight_a: &SymMatrix,
    b: &DVector<f64>,
    weight_b: &SymMatrix,
) -> Result<QuadFormDecomposition, AlgebraError> {
    let n = a.len();
    for found in [b.len(), weight_a.dim(), weight_b.dim()] {
        if found != n {
            return Err(AlgebraError::DimensionMismatch { expected: n, found });
        }
    }
    let sum = weight_a.as_matrix() + weight_b.as_matrix();
    let lu = sum.clone().lu();
    let u = lu.u();
    let pivot_scale = sum.amax().max(f64::MIN_POSITIVE);
    if u.diagonal().iter().any(|p| p.abs() <= SINGULAR_PIVOT_TOL * pivot_scale) {
        return Err(AlgebraError::SingularCombination);
    }
    let rhs = weight_a.as_matrix() * a + weight_b.as_matrix() * b;
    let center = lu.solve(&rhs).ok_or(AlgebraError::SingularCombination)?;
    let solved_b = lu
        .solve(weight_b.as_matrix())
        .ok_or(AlgebraError::SingularCombination)?;
    let cross = weight_a.as_matrix() * solved_b;
    Ok(QuadFormDecomposition {
        cross_weight: SymMatrix::symmetrize(cross),
        combined_center: center,
        combined_weight: SymMatrix::symmetrize(sum),
        offset: a - b,
    })
}

/// Multivariate normal density `N(x; mean, cov)`.
pub fn gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &SymMatrix) -> Result<f64, AlgebraError> {
    Ok(log_gaussian_density(x, mean, cov)?.exp())
}

pub fn log_gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &SymMatrix) -> Result<f64, AlgebraError> {
    let n = cov.dim();
    if x.len() != n || mean.len() != n {
        return Err(AlgebraError::DimensionMismatch {
            expected: n,
            found: x.len().max(mean.len()),
        });
    }
    let chol = cov.cholesky()?;
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).ok_or(AlgebraError::NotPd)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (z.norm_squared() + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// `E[∏ₖ Zₖ^αₖ]` for `Z ~ N(0, cov)`.
///
/// Uses the pairing recursion `E[Zᵢ ∏rest] = Σⱼ covᵢⱼ E[∏rest∖{j}]` with
/// memoization on the multi-index.
pub fn isserlis_moment(alpha: &[u32], cov: &SymMatrix) -> f64 {
    assert_eq!(alpha.len(), cov.dim(), "multi-index length must match dimension");
    let order: u32 = alpha.iter().sum();
    if order % 2 == 1 {
        return 0.0;
    }
    let mut memo = HashMap::new();
    isserlis_rec(alpha.to_vec(), cov, &mut memo)
}

fn isserlis_rec(alpha: Vec<u32>, cov: &SymMatrix, memo: &mut HashMap<Vec<u32>, f64>) -> f64 {
    let order: u32 = alpha.iter().sum();
    if order == 0 {
        return 1.0;
    }
    if order % 2 == 1 {
        return 0.0;
    }
    if let Some(&v) = memo.get(&alpha) {
        return v;
    }
    let i = alpha.iter().position(|&k| k > 0).expect("nonzero order");
    let mut rest = alpha.clone();
    rest[i] -= 1;
    let mut total = 0.0;
    for j in 0..rest.len() {
        if rest[j] == 0 {
            continue;
        }
        let c = cov.get(i, j);
        if c == 0.0 {
            continue;
        }
        let mult = rest[j] as f64;
        let mut reduced = rest.clone();
        reduced[j] -= 1;
        total += mult * c * isserlis_rec(reduced, cov, memo);
    }
    memo.insert(alpha, total);
    total
}
