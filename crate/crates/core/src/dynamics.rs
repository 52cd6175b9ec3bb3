//! Hidden diffusion `dX = (A(X) + B(t)) dt + D dW`: model description,
//! Euler–Maruyama simulation and the stationary law of stable linear models.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::belief::GaussianBelief;
use crate::linalg::{AlgebraError, SymMatrix};

/// Largest state / mark dimension supported.
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step must be positive and no larger than the horizon (dt = {dt}, horizon = {horizon})")]
    InvalidStep { dt: f64, horizon: f64 },
    #[error("drift matrix has an eigenvalue with nonnegative real part ({0})")]
    Unstable(f64),
    #[error("operation requires a linear drift")]
    RequiresLinearDrift,
    #[error("initial covariance is not positive semidefinite")]
    NotPsd,
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// One term `A_α x^α` of a polynomial drift.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTerm {
    pub exponents: Vec<u32>,
    pub coefficients: DVector<f64>,
}

/// Polynomial drift `A(x) = Σ_α A_α x^α` with vector coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialDrift {
    dim: usize,
    terms: Vec<SeriesTerm>,
}

impl PolynomialDrift {
    pub fn new(dim: usize, terms: Vec<SeriesTerm>) -> Result<Self, DynamicsError> {
        for term in &terms {
            if term.exponents.len() != dim {
                return Err(DynamicsError::DimensionMismatch {
                    what: "series multi-index",
                    expected: dim,
                    found: term.exponents.len(),
                });
            }
            if term.coefficients.len() != dim {
                return Err(DynamicsError::DimensionMismatch {
                    what: "series coefficient",
                    expected: dim,
                    found: term.coefficients.len(),
                });
            }
        }
        Ok(PolynomialDrift { dim, terms })
    }

    /// The linear drift `x ↦ A x` written as first-order terms.
    pub fn from_linear(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let terms = (0..n)
            .map(|j| {
                let mut exponents = vec![0; n];
                exponents[j] = 1;
                SeriesTerm {
                    exponents,
                    coefficients: a.column(j).into_owned(),
                }
            })
            .collect();
        PolynomialDrift { dim: n, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[SeriesTerm] {
        &self.terms
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for term in &self.terms {
            out.axpy(monomial(&term.exponents, x.as_slice()), &term.coefficients, 1.0);
        }
        out
    }

    /// Re-expands the polynomial in powers of `(x − center)`.
    ///
    /// The result is exact: `Σ_β Ã_β (x−center)^β = Σ_α A_α x^α`, with
    /// `Ã_β = Σ_{α ≥ β} A_α ∏ₖ C(αₖ, βₖ) centerₖ^{αₖ−βₖ}`.
    pub fn expand_about(&self, center: &DVector<f64>) -> Vec<SeriesTerm> {
        let mut acc: BTreeMap<Vec<u32>, DVector<f64>> = BTreeMap::new();
        for term in &self.terms {
            for beta in sub_indices(&term.exponents) {
                let mut weight = 1.0;
                for k in 0..self.dim {
                    let (a, b) = (term.exponents[k], beta[k]);
                    weight *= binomial(a, b) * center[k].powi((a - b) as i32);
                }
                if weight == 0.0 {
                    continue;
                }
                acc.entry(beta)
                    .or_insert_with(|| DVector::zeros(self.dim))
                    .axpy(weight, &term.coefficients, 1.0);
            }
        }
        acc.into_iter()
            .map(|(exponents, coefficients)| SeriesTerm {
                exponents,
                coefficients,
            })
            .collect()
    }
}

fn monomial(exponents: &[u32], x: &[f64]) -> f64 {
    exponents.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices `β ≤ α` componentwise.
fn sub_indices(alpha: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::with_capacity(alpha.len())];
    for &a in alpha {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=a).map(move |b| {
                    let mut p = prefix.clone();
                    p.push(b);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Drift {
    Linear(DMatrix<f64>),
    Series(PolynomialDrift),
}

impl Drift {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Drift::Linear(a) => a * x,
            Drift::Series(p) => p.eval(x),
        }
    }
}

/// Exogenous input `B(U_t)` tabulated on a uniform grid starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlInput {
    pub dt: f64,
    pub values: Vec<DVector<f64>>,
}

impl ControlInput {
    /// Value on the grid cell containing `t` (held past the last sample).
    pub fn at(&self, t: f64) -> &DVector<f64> {
        let idx = grid_index(t, self.dt).min(self.values.len().saturating_sub(1));
        &self.values[idx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateModel {
    pub drift: Drift,
    pub diffusion: DMatrix<f64>,
    pub initial_mean: DVector<f64>,
    /// Positive semidefinite; the zero matrix gives a deterministic start.
    pub initial_cov: SymMatrix,
    pub control: Option<ControlInput>,
}

impl StateModel {
    pub fn new(
        drift: Drift,
        diffusion: DMatrix<f64>,
        initial_mean: DVector<f64>,
        initial_cov: SymMatrix,
    ) -> Result<Self, DynamicsError> {
        let n = initial_mean.len();
        if n == 0 || n > MAX_DIM {
            return Err(DynamicsError::DimensionMismatch {
                what: "state",
                expected: MAX_DIM,
                found: n,
            });
        }
        let drift_dim = match &drift {
            Drift::Linear(a) => {
                if a.nrows() != a.ncols() {
                    return Err(DynamicsError::DimensionMismatch {
                        what: "drift matrix",
                        expected: a.nrows(),
                        found: a.ncols(),
                    });
                }
                a.nrows()
            }
            Drift::Series(p) => p.dim(),
        };
        for (what, found) in [
            ("drift", drift_dim),
            ("diffusion rows", diffusion.nrows()),
            ("diffusion columns", diffusion.ncols()),
            ("initial covariance", initial_cov.dim()),
        ] {
            if found != n {
                return Err(DynamicsError::DimensionMismatch {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        if initial_cov.min_eigenvalue() < -1e-12 * initial_cov.as_matrix().amax().max(1.0) {
            return Err(DynamicsError::NotPsd);
        }
        Ok(StateModel {
            drift,
            diffusion,
            initial_mean,
            initial_cov,
            control: None,
        })
    }

    /// Scalar linear model `dX = a X dt + d dW`, `X₀ ~ N(mean, var)`.
    pub fn scalar(a: f64, d: f64, mean: f64, var: f64) -> Result<Self, DynamicsError> {
        Self::new(
            Drift::Linear(DMatrix::from_element(1, 1, a)),
            DMatrix::from_element(1, 1, d),
            DVector::from_element(1, mean),
            SymMatrix::scalar(var),
        )
    }

    pub fn with_control(mut self, control: ControlInput) -> Result<Self, DynamicsError> {
        if let Some(v) = control.values.iter().find(|v| v.len() != self.dim()) {
            return Err(DynamicsError::DimensionMismatch {
                what: "control input",
                expected: self.dim(),
                found: v.len(),
            });
        }
        self.control = Some(control);
        Ok(self)
    }

    pub fn with_initial(mut self, mean: DVector<f64>, cov: SymMatrix) -> Result<Self, DynamicsError> {
        if mean.len() != self.dim() || cov.dim() != self.dim() {
            return Err(DynamicsError::DimensionMismatch {
                what: "initial condition",
                expected: self.dim(),
                found: mean.len(),
            });
        }
        self.initial_mean = mean;
        self.initial_cov = cov;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.initial_mean.len()
    }

    /// `D Dᵀ`
    pub fn noise_cov(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.diffusion * self.diffusion.transpose())
    }

    pub fn linear_drift(&self) -> Result<&DMatrix<f64>, DynamicsError> {
        match &self.drift {
            Drift::Linear(a) => Ok(a),
            Drift::Series(_) => Err(DynamicsError::RequiresLinearDrift),
        }
    }

    pub fn control_at(&self, t: f64) -> Option<&DVector<f64>> {
        self.control.as_ref().map(|c| c.at(t))
    }

    /// Initial state and covariance replaced by the stationary law.
    pub fn at_steady_state(self) -> Result<Self, DynamicsError> {
        let prior = steady_state_prior(&self)?;
        self.with_initial(prior.mean, prior.cov)
    }
}

/// Sampled trajectory on the uniform grid `tₖ = k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl StatePath {
    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            f64::INFINITY
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("path is never empty")
    }

    /// State at the last grid point at or before `t`.
    pub fn state_at(&self, t: f64) -> &DVector<f64> {
        &self.states[self.index_at(t)]
    }

    pub fn index_at(&self, t: f64) -> usize {
        let mut idx = grid_index(t, self.dt()).min(self.times.len() - 1);
        while idx > 0 && self.times[idx] > t {
            idx -= 1;
        }
        while idx + 1 < self.times.len() && self.times[idx + 1] <= t {
            idx += 1;
        }
        idx
    }

    /// Path that stays at `x` over the given grid.
    pub fn constant(x: DVector<f64>, horizon: f64, dt: f64) -> Result<Self, DynamicsError> {
        let times = time_grid(horizon, dt)?;
        let states = vec![x; times.len()];
        Ok(StatePath { times, states })
    }
}

fn grid_index(t: f64, dt: f64) -> usize {
    if !(t > 0.0) || !dt.is_finite() {
        return 0;
    }
    (t / dt).floor() as usize
}

/// Grid `0, dt, 2dt, …` whose last point is the first one reaching `horizon`.
pub fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>, DynamicsError> {
    if !(horizon > 0.0) || !(dt > 0.0) || dt > horizon * (1.0 + 1e-12) {
        return Err(DynamicsError::InvalidStep { dt, horizon });
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

/// Matrix square root `L` with `L Lᵀ = cov` for a PSD covariance.
pub(crate) fn psd_factor(cov: &SymMatrix) -> Result<DMatrix<f64>, DynamicsError> {
    if let Ok(chol) = cov.cholesky() {
        return Ok(chol.l());
    }
    let eig = cov.as_matrix().clone().symmetric_eigen();
    let tol = 1e-12 * cov.as_matrix().amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(DynamicsError::NotPsd);
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

pub(crate) fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let xi = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + factor * xi
}

/// Euler–Maruyama path of `model`, reproducible from `seed`.
pub fn simulate_path(model: &StateModel, horizon: f64, dt: f64, seed: u64) -> Result<StatePath, DynamicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_path_with(model, horizon, dt, &mut rng)
}

pub fn simulate_path_with<R: Rng + ?Sized>(
    model: &StateModel,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<StatePath, DynamicsError> {
    let times = time_grid(horizon, dt)?;
    let n = model.dim();
    let x0 = sample_gaussian(&model.initial_mean, &psd_factor(&model.initial_cov)?, rng);
    let noise_gain = &model.diffusion * dt.sqrt();
    let noiseless = model.diffusion.iter().all(|&v| v == 0.0);
    let mut states = Vec::with_capacity(times.len());
    let mut x = x0;
    let mut xi = DVector::zeros(n);
    states.push(x.clone());
    for &t in &times[..times.len() - 1] {
        let mut next = &x + model.drift.eval(&x) * dt;
        if let Some(u) = model.control_at(t) {
            next.axpy(dt, u, 1.0);
        }
        if !noiseless {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            next.gemv(1.0, &noise_gain, &xi, 1.0);
        }
        x = next;
        states.push(x.clone());
    }
    Ok(StatePath { times, states })
}

/// Stationary law `N(0, Σ∞)` with `AΣ∞ + Σ∞Aᵀ + DDᵀ = 0`.
pub fn steady_state_prior(model: &StateModel) -> Result<GaussianBelief, DynamicsError> {
    let a = model.linear_drift()?;
    let n = model.dim();
    let worst = if n == 1 {
        a[(0, 0)]
    } else {
        a.complex_eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    if worst >= 0.0 {
        return Err(DynamicsError::Unstable(worst));
    }
    let cov = solve_lyapunov(a, model.noise_cov().as_matrix())?;
    Ok(GaussianBelief::new(DVector::zeros(n), cov))
}

/// Solves `A X + X Aᵀ + Q = 0` through the Kronecker form
/// `(I⊗A + A⊗I) vec X = −vec Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<SymMatrix, DynamicsError> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let system = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let vec_x = system
        .lu()
        .solve(&rhs)
        .ok_or(DynamicsError::Algebra(AlgebraError::SingularCombination))?;
    Ok(SymMatrix::symmetrize(DMatrix::from_column_slice(
        n,
        n,
        vec_x.as_slice(),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn static_state_path_is_constant() {
        let model = StateModel::scalar(0.0, 0.0, 0.5, 0.0).unwrap();
        let path = simulate_path(&model, 2.0, 1e-3, 7).unwrap();
        assert_eq!(path.times.len(), 2001);
        assert!(path.states.iter().all(|x| x[0] == 0.5));
    }

    #[test]
    fn replay_is_bit_identical() {
        let model = StateModel::scalar(-0.3, 0.8, 0.0, 1.0).unwrap();
        let p1 = simulate_path(&model, 1.0, 1e-3, 42).unwrap();
        let p2 = simulate_path(&model, 1.0, 1e-3, 42).unwrap();
        let p3 = simulate_path(&model, 1.0, 1e-3, 43).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
    }

    #[test]
    fn invalid_step() {
        let model = StateModel::scalar(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            simulate_path(&model, 1.0, 0.0, 1),
            Err(DynamicsError::InvalidStep { .. })
        ));
        assert!(matches!(
            simulate_path(&model, 1.0, 2.0, 1),
            Err(DynamicsError::InvalidStep { .. })
        ));
    }

    #[test]
    fn scalar_lyapunov() {
        let m = StateModel::scalar(-1.0, 0.5, 0.0, 1.0).unwrap();
        assert_relative_eq!(steady_state_prior(&m).unwrap().cov.get(0, 0), 0.125, epsilon = 1e-14);
        let m = StateModel::scalar(-0.1, 0.5, 0.0, 1.0).unwrap();
        assert_relative_eq!(steady_state_prior(&m).unwrap().cov.get(0, 0), 1.25, epsilon = 1e-13);
    }

    #[test]
    fn decoupled_lyapunov() {
        let m = StateModel::new(
            Drift::Linear(-DMatrix::identity(2, 2)),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let p = steady_state_prior(&m).unwrap();
        assert_relative_eq!(*p.cov.as_matrix(), DMatrix::identity(2, 2) * 0.5, epsilon = 1e-13);
    }

    #[test]
    fn coupled_lyapunov_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.7, -0.2]);
        let d = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.5, 1.0]);
        let q = &d * d.transpose();
        let x = solve_lyapunov(&a, &q).unwrap();
        let res = &a * x.as_matrix() + x.as_matrix() * a.transpose() + q;
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn unstable_drift_rejected() {
        let m = StateModel::scalar(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(steady_state_prior(&m), Err(DynamicsError::Unstable(_))));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let m = StateModel::new(
            Drift::Linear(a),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        assert!(matches!(steady_state_prior(&m), Err(DynamicsError::Unstable(_))));
    }

    #[test]
    fn polynomial_reexpansion_is_exact() {
        // A(x) = (x₀² x₁ − 2 x₁, 0.5 + x₀³)
        let p = PolynomialDrift::new(
            2,
            vec![
                SeriesTerm {
                    exponents: vec![2, 1],
                    coefficients: dvector![1.0, 0.0],
                },
                SeriesTerm {
                    exponents: vec![0, 1],
                    coefficients: dvector![-2.0, 0.0],
                },
                SeriesTerm {
                    exponents: vec![0, 0],
                    coefficients: dvector![0.0, 0.5],
                },
                SeriesTerm {
                    exponents: vec![3, 0],
                    coefficients: dvector![0.0, 1.0],
                },
            ],
        )
        .unwrap();
        let center = dvector![0.7, -1.3];
        let shifted = p.expand_about(&center);
        for x in [dvector![0.0, 0.0], dvector![1.1, 2.0], dvector![-0.4, 0.9]] {
            let z = &x - &center;
            let mut via_shift = DVector::zeros(2);
            for t in &shifted {
                via_shift += &t.coefficients * monomial(&t.exponents, z.as_slice());
            }
            assert_relative_eq!(via_shift, p.eval(&x), epsilon = 1e-12);
        }
    }

    #[test]
    fn control_input_shifts_mean() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 0.0)
            .unwrap()
            .with_control(ControlInput {
                dt: 0.5,
                values: vec![dvector![1.0], dvector![-2.0]],
            })
            .unwrap();
        let path = simulate_path(&model, 1.0, 0.01, 0).unwrap();
        // +1 for half a unit, then −2 for half a unit
        assert_relative_eq!(path.states.last().unwrap()[0], -0.5, epsilon = 1e-9);
    }

    #[test]
    fn path_lookup_is_left_continuous_on_grid() {
        let model = StateModel::scalar(0.0, 1.0, 0.0, 1.0).unwrap();
        let path = simulate_path(&model, 1.0, 0.1, 3).unwrap();
        assert_eq!(path.index_at(0.0), 0);
        assert_eq!(path.index_at(0.35), 3);
        assert_eq!(path.index_at(0.2999), 2);
        assert_eq!(path.index_at(5.0), 10);
    }
}
