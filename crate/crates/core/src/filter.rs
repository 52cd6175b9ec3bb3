//! Assumed density filter for a diffusion observed through a Gaussian
//! population of Poisson neurons.
//!
//! The posterior is kept Gaussian, `N(μ_t, Σ_t)`. Between spikes the moments
//! follow
//!
//! ```text
//! dμ/dt = Aμ + B(t) + g_t ΣHᵀS_t(Hμ − c)
//! dΣ/dt = AΣ + ΣAᵀ + DDᵀ + g_t [ΣHᵀS_tHΣ − ΣHᵀS_t(Hμ−c)(Hμ−c)ᵀS_tHΣ]
//! ```
//!
//! with `S_t = (Σ_tc + Σ_pop + HΣHᵀ)⁻¹` and the posterior expected total rate
//! `g_t = λ⁰ √det(Σ_tc S_t) exp(−½‖Hμ−c‖²_{S_t})`. A spike with mark `θ`
//! applies the conjugate update with `S^R = (Σ_tc + HΣHᵀ)⁻¹`:
//!
//! ```text
//! μ⁺ = μ⁻ + Σ⁻HᵀS^R(θ − Hμ⁻),   Σ⁺ = Σ⁻ − Σ⁻HᵀS^RHΣ⁻
//! ```
//!
//! The uniform-coding filter is the same system without the `g_t` terms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub use crate::belief::GaussianBelief;
use crate::dynamics::{time_grid, DynamicsError, PolynomialDrift, StateModel};
use crate::linalg::{isserlis_moment, SymMatrix};
use crate::spikes::{EncoderError, EncoderParams, SpikeTrain};

/// Number of times a step is halved before giving up on keeping Σ PD.
pub const MAX_STEP_HALVINGS: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("posterior covariance is not positive definite at t = {time}")]
    NotPd { time: f64 },
    #[error("covariance lost positive definiteness at t = {time} even after {MAX_STEP_HALVINGS} step halvings")]
    StepTooLarge { time: f64 },
    #[error("filter mode requires a linear drift")]
    RequiresLinearDrift,
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Which filtering equations to integrate.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterMode {
    /// Linear drift with the `g_t` (absence-of-spikes) terms.
    Full,
    /// Linear drift, `g_t` terms dropped: the exact filter under uniform coding.
    UniformCoding,
    /// Polynomial drift whose moments are taken under the Gaussian belief,
    /// plus the `g_t` terms.
    Nonlinear(PolynomialDrift),
}

impl FilterMode {
    fn uses_rate_terms(&self) -> bool {
        !matches!(self, FilterMode::UniformCoding)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterDiagnostics {
    /// `g_t` at each grid node (empty when the population is not Gaussian).
    pub g_trace: Vec<f64>,
    pub jump_count: usize,
    pub min_eig_trace: Vec<f64>,
}

/// Belief trajectory on the filter's time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    pub times: Vec<f64>,
    pub beliefs: Vec<GaussianBelief>,
    pub diagnostics: FilterDiagnostics,
}

#[derive(Clone, Debug)]
struct PopulationTerms {
    center: DVector<f64>,
    /// `Σ_tc + Σ_pop`
    combined_cov: DMatrix<f64>,
    tuning_det: f64,
    rate_scale: f64,
}

/// Derivative of the moments plus the `g_t` used to form it.
#[derive(Clone, Debug)]
pub struct MomentDerivative {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub expected_rate: Option<f64>,
}

/// A filter bound to one model, encoder and mode, with the constant
/// matrices precomputed.
#[derive(Clone, Debug)]
pub struct AdfFilter {
    n: usize,
    observation: DMatrix<f64>,
    observation_t: DMatrix<f64>,
    tuning_cov: DMatrix<f64>,
    population: Option<PopulationTerms>,
    linear_drift: Option<DMatrix<f64>>,
    series_drift: Option<PolynomialDrift>,
    noise_cov: DMatrix<f64>,
    model: StateModel,
    rate_terms: bool,
}

impl AdfFilter {
    pub fn new(model: &StateModel, enc: &EncoderParams, mode: &FilterMode) -> Result<Self, FilterError> {
        let n = model.dim();
        if enc.state_dim() != n {
            return Err(FilterError::DimensionMismatch {
                what: "encoder state dimension",
                expected: n,
                found: enc.state_dim(),
            });
        }
        let population = match enc.gaussian_population() {
            Ok((center, cov)) => Some(PopulationTerms {
                center: center.clone(),
                combined_cov: enc.tuning_cov.as_matrix() + cov.as_matrix(),
                tuning_det: enc.tuning_cov.determinant(),
                rate_scale: enc.rate_scale,
            }),
            Err(e) => {
                if mode.uses_rate_terms() {
                    return Err(e.into());
                }
                None
            }
        };
        let (linear_drift, series_drift) = match mode {
            FilterMode::Full | FilterMode::UniformCoding => (
                Some(
                    model
                        .linear_drift()
                        .map_err(|_| FilterError::RequiresLinearDrift)?
                        .clone(),
                ),
                None,
            ),
            FilterMode::Nonlinear(series) => {
                if series.dim() != n {
                    return Err(FilterError::DimensionMismatch {
                        what: "series drift",
                        expected: n,
                        found: series.dim(),
                    });
                }
                (None, Some(series.clone()))
            }
        };
        Ok(AdfFilter {
            n,
            observation: enc.observation.clone(),
            observation_t: enc.observation.transpose(),
            tuning_cov: enc.tuning_cov.as_matrix().clone(),
            population,
            linear_drift,
            series_drift,
            noise_cov: model.noise_cov().into_inner(),
            model: model.clone(),
            rate_terms: mode.uses_rate_terms(),
        })
    }

    /// `g_t`; `None` when the population is not Gaussian.
    pub fn expected_total_rate(&self, belief: &GaussianBelief) -> Result<Option<f64>, FilterError> {
        let Some(pop) = &self.population else {
            return Ok(None);
        };
        let hs = &self.observation * belief.cov.as_matrix();
        let chol = self.rate_factor(pop, &hs)?;
        let r = &self.observation * &belief.mean - &pop.center;
        let q = r.dot(&chol.solve(&r));
        Ok(Some(rate_from_factor(pop, &chol, q)))
    }

    fn rate_factor(&self, pop: &PopulationTerms, hs: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, FilterError> {
        let s_inv = &pop.combined_cov + hs * &self.observation_t;
        Cholesky::new(s_inv).ok_or(FilterError::NotPd { time: f64::NAN })
    }

    /// Right-hand side of the between-spike moment equations at time `t`.
    pub fn derivative(&self, belief: &GaussianBelief, t: f64) -> Result<MomentDerivative, FilterError> {
        let mu = &belief.mean;
        let sigma = belief.cov.as_matrix();
        let (mut dmu, mut dsig) = match (&self.linear_drift, &self.series_drift) {
            (Some(a), _) => {
                let a_sigma = a * sigma;
                let t = a_sigma.transpose();
                (a * mu, a_sigma + t)
            }
            (None, Some(series)) => self.series_drift_moments(series, belief),
            (None, None) => unreachable!("filter always has a drift"),
        };
        dsig += &self.noise_cov;
        if let Some(u) = self.model.control_at(t) {
            dmu += u;
        }
        let mut expected_rate = None;
        if let Some(pop) = &self.population {
            let hs = &self.observation * sigma;
            let chol = self.rate_factor(pop, &hs).map_err(|_| FilterError::NotPd { time: t })?;
            let r = &self.observation * mu - &pop.center;
            let s_r = chol.solve(&r);
            let g = rate_from_factor(pop, &chol, r.dot(&s_r));
            expected_rate = Some(g);
            if self.rate_terms {
                // v = ΣHᵀS(Hμ−c),   ΣHᵀSHΣ = (HΣ)ᵀ S (HΣ)
                let v = hs.transpose() * &s_r;
                let shs = chol.solve(&hs);
                dmu.axpy(g, &v, 1.0);
                dsig += (hs.transpose() * shs - &v * v.transpose()) * g;
            }
        }
        Ok(MomentDerivative {
            mean: dmu,
            cov: SymMatrix::symmetrize(dsig),
            expected_rate,
        })
    }

    /// `(Σ_β Ã_β E_β(Σ),  Σ_β Ã_β 𝐄_βᵀ + 𝐄_β Ã_βᵀ)` for the drift re-expanded
    /// about the current mean, with `𝐄_β = (E_{β+e_1}, …, E_{β+e_n})`.
    fn series_drift_moments(&self, series: &PolynomialDrift, belief: &GaussianBelief) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut dmu = DVector::zeros(n);
        let mut dsig = DMatrix::zeros(n, n);
        for term in series.expand_about(&belief.mean) {
            dmu.axpy(isserlis_moment(&term.exponents, &belief.cov), &term.coefficients, 1.0);
            let mut shifted = term.exponents.clone();
            let e = DVector::from_fn(n, |j, _| {
                shifted[j] += 1;
                let v = isserlis_moment(&shifted, &belief.cov);
                shifted[j] -= 1;
                v
            });
            let outer = &term.coefficients * e.transpose();
            dsig += &outer + outer.transpose();
        }
        (dmu, dsig)
    }

    /// `Σ⁻HᵀS^R`, the gain applied to the innovation at a spike.
    pub fn spike_gain(&self, belief: &GaussianBelief) -> Result<DMatrix<f64>, FilterError> {
        let hs = &self.observation * belief.cov.as_matrix();
        let chol =
            Cholesky::new(&self.tuning_cov + &hs * &self.observation_t).ok_or(FilterError::NotPd { time: f64::NAN })?;
        Ok(chol.solve(&hs).transpose())
    }

    pub fn apply_spike(&self, belief: &GaussianBelief, mark: &DVector<f64>) -> Result<GaussianBelief, FilterError> {
        if mark.len() != self.observation.nrows() {
            return Err(FilterError::DimensionMismatch {
                what: "spike mark",
                expected: self.observation.nrows(),
                found: mark.len(),
            });
        }
        let gain = self.spike_gain(belief)?;
        let innovation = mark - &self.observation * &belief.mean;
        let mean = &belief.mean + &gain * innovation;
        let hs = &self.observation * belief.cov.as_matrix();
        let cov = SymMatrix::symmetrize(belief.cov.as_matrix() - gain * hs);
        if !cov.is_pd() {
            return Err(FilterError::NotPd { time: f64::NAN });
        }
        Ok(GaussianBelief { mean, cov })
    }

    /// Integrates the filter over the spike train's horizon on the grid
    /// `0, dt, 2dt, …`.
    ///
    /// Spikes falling inside a step split it; a spike exactly on a node is
    /// applied after the step ending there. The recorded belief at a node is
    /// the value after any jump at that node.
    pub fn run(&self, train: &SpikeTrain, init: &GaussianBelief, dt: f64) -> Result<FilterRun, FilterError> {
        if init.dim() != self.n {
            return Err(FilterError::DimensionMismatch {
                what: "initial belief",
                expected: self.n,
                found: init.dim(),
            });
        }
        if !init.is_pd() {
            return Err(FilterError::NotPd { time: 0.0 });
        }
        if let Some(mark) = train.events().first().map(|s| s.mark.len()) {
            if mark != self.observation.nrows() {
                return Err(FilterError::DimensionMismatch {
                    what: "spike mark",
                    expected: self.observation.nrows(),
                    found: mark,
                });
            }
        }
        match self.scalar_kernel() {
            Some(k) => integrate(&k, train, (init.mean[0], init.cov.get(0, 0)), dt),
            None => integrate(self, train, init.clone(), dt),
        }
    }

    /// Closed-form scalar equations, used when state and mark are scalar and
    /// the drift is linear.
    fn scalar_kernel(&self) -> Option<ScalarKernel<'_>> {
        let a = self.linear_drift.as_ref()?;
        if self.n != 1 || self.observation.nrows() != 1 {
            return None;
        }
        Some(ScalarKernel {
            a: a[(0, 0)],
            noise: self.noise_cov[(0, 0)],
            h: self.observation[(0, 0)],
            tuning: self.tuning_cov[(0, 0)],
            population: self
                .population
                .as_ref()
                .map(|p| (p.center[0], p.combined_cov[(0, 0)], p.tuning_det, p.rate_scale)),
            rate_terms: self.rate_terms,
            model: &self.model,
        })
    }
}

/// The operations the grid integrator needs from a moment representation.
trait MomentKernel {
    type State: Clone;
    type Deriv;
    fn derivative(&self, s: &Self::State, t: f64) -> Result<(Self::Deriv, Option<f64>), FilterError>;
    fn euler(&self, s: &Self::State, d: &Self::Deriv, h: f64) -> Self::State;
    fn is_pd(&self, s: &Self::State) -> bool;
    fn jump(&self, s: &Self::State, mark: &DVector<f64>) -> Result<Self::State, FilterError>;
    fn min_eigenvalue(&self, s: &Self::State) -> f64;
    fn belief(&self, s: &Self::State) -> GaussianBelief;
}

impl MomentKernel for AdfFilter {
    type State = GaussianBelief;
    type Deriv = MomentDerivative;

    fn derivative(&self, s: &GaussianBelief, t: f64) -> Result<(MomentDerivative, Option<f64>), FilterError> {
        let d = AdfFilter::derivative(self, s, t)?;
        let g = d.expected_rate;
        Ok((d, g))
    }

    fn euler(&self, s: &GaussianBelief, d: &MomentDerivative, h: f64) -> GaussianBelief {
        let mean = &s.mean + &d.mean * h;
        let cov = SymMatrix::symmetrize(s.cov.as_matrix() + d.cov.as_matrix() * h);
        GaussianBelief { mean, cov }
    }

    fn is_pd(&self, s: &GaussianBelief) -> bool {
        s.cov.is_pd()
    }

    fn jump(&self, s: &GaussianBelief, mark: &DVector<f64>) -> Result<GaussianBelief, FilterError> {
        self.apply_spike(s, mark)
    }

    fn min_eigenvalue(&self, s: &GaussianBelief) -> f64 {
        s.cov.min_eigenvalue()
    }

    fn belief(&self, s: &GaussianBelief) -> GaussianBelief {
        s.clone()
    }
}

struct ScalarKernel<'a> {
    a: f64,
    /// `d²`
    noise: f64,
    h: f64,
    tuning: f64,
    /// `(c, σ_tc² + σ_pop², σ_tc², λ⁰)`
    population: Option<(f64, f64, f64, f64)>,
    rate_terms: bool,
    model: &'a StateModel,
}

impl MomentKernel for ScalarKernel<'_> {
    type State = (f64, f64);
    type Deriv = (f64, f64);

    fn derivative(&self, &(mu, var): &(f64, f64), t: f64) -> Result<((f64, f64), Option<f64>), FilterError> {
        let mut dmu = self.a * mu;
        let mut dvar = 2.0 * self.a * var + self.noise;
        if let Some(u) = self.model.control_at(t) {
            dmu += u[0];
        }
        let mut g = None;
        if let Some((c, combined, tc, rate)) = self.population {
            let s_inv = combined + self.h * self.h * var;
            if !(s_inv > 0.0) {
                return Err(FilterError::NotPd { time: t });
            }
            let r = self.h * mu - c;
            let rate_now = rate * (tc / s_inv).sqrt() * (-0.5 * r * r / s_inv).exp();
            g = Some(rate_now);
            if self.rate_terms {
                let hs = self.h * var;
                let v = hs * r / s_inv;
                dmu += rate_now * v;
                dvar += rate_now * (hs * hs / s_inv - v * v);
            }
        }
        Ok(((dmu, dvar), g))
    }

    fn euler(&self, &(mu, var): &(f64, f64), &(dmu, dvar): &(f64, f64), h: f64) -> (f64, f64) {
        (mu + dmu * h, var + dvar * h)
    }

    fn is_pd(&self, s: &(f64, f64)) -> bool {
        s.1 > 0.0
    }

    fn jump(&self, &(mu, var): &(f64, f64), mark: &DVector<f64>) -> Result<(f64, f64), FilterError> {
        let hs = self.h * var;
        let gain = hs / (self.tuning + self.h * hs);
        let next = (mu + gain * (mark[0] - self.h * mu), var - gain * hs);
        if !(next.1 > 0.0) {
            return Err(FilterError::NotPd { time: f64::NAN });
        }
        Ok(next)
    }

    fn min_eigenvalue(&self, s: &(f64, f64)) -> f64 {
        s.1
    }

    fn belief(&self, s: &(f64, f64)) -> GaussianBelief {
        GaussianBelief::scalar(s.0, s.1)
    }
}

/// One explicit Euler step of length `h`, halving the step when the result
/// is not PD.
fn advance<K: MomentKernel>(
    k: &K,
    state: &K::State,
    first: Option<K::Deriv>,
    t: f64,
    h: f64,
    halvings: u32,
) -> Result<K::State, FilterError> {
    let d = match first {
        Some(d) => d,
        None => k.derivative(state, t)?.0,
    };
    let next = k.euler(state, &d, h);
    if k.is_pd(&next) {
        return Ok(next);
    }
    if halvings >= MAX_STEP_HALVINGS {
        return Err(FilterError::StepTooLarge { time: t });
    }
    let half = h * 0.5;
    let mid = advance(k, state, Some(d), t, half, halvings + 1)?;
    advance(k, &mid, None, t + half, half, halvings + 1)
}

fn integrate<K: MomentKernel>(k: &K, train: &SpikeTrain, init: K::State, dt: f64) -> Result<FilterRun, FilterError> {
    let times = time_grid(train.horizon(), dt)?;
    let spikes = train.events();
    let mut beliefs = Vec::with_capacity(times.len());
    let mut diagnostics = FilterDiagnostics {
        g_trace: Vec::with_capacity(times.len()),
        jump_count: 0,
        min_eig_trace: Vec::with_capacity(times.len()),
    };
    let mut state = init;
    let mut next_spike = 0;
    while next_spike < spikes.len() && spikes[next_spike].time <= times[0] {
        state = k
            .jump(&state, &spikes[next_spike].mark)
            .map_err(|e| at_time(e, spikes[next_spike].time))?;
        next_spike += 1;
        diagnostics.jump_count += 1;
    }
    for i in 0..times.len() {
        let (node_derivative, g) = k.derivative(&state, times[i])?;
        if let Some(g) = g {
            diagnostics.g_trace.push(g);
        }
        diagnostics.min_eig_trace.push(k.min_eigenvalue(&state));
        beliefs.push(k.belief(&state));
        if i + 1 == times.len() {
            break;
        }
        let end = times[i + 1];
        let mut t = times[i];
        let mut pending = Some(node_derivative);
        while next_spike < spikes.len() && spikes[next_spike].time <= end {
            let spike = &spikes[next_spike];
            if spike.time > t {
                state = advance(k, &state, pending.take(), t, spike.time - t, 0)?;
                t = spike.time;
            }
            pending = None;
            state = k.jump(&state, &spike.mark).map_err(|e| at_time(e, spike.time))?;
            next_spike += 1;
            diagnostics.jump_count += 1;
        }
        if end > t {
            state = advance(k, &state, pending.take(), t, end - t, 0)?;
        }
    }
    Ok(FilterRun {
        times,
        beliefs,
        diagnostics,
    })
}

fn rate_from_factor(pop: &PopulationTerms, chol: &Cholesky<f64, Dyn>, q: f64) -> f64 {
    // det(Σ_tc S) = det Σ_tc / det(S⁻¹)
    let det_s_inv = chol.determinant();
    pop.rate_scale * (pop.tuning_det / det_s_inv).sqrt() * (-0.5 * q).exp()
}

fn at_time(e: FilterError, time: f64) -> FilterError {
    match e {
        FilterError::NotPd { .. } => FilterError::NotPd { time },
        other => other,
    }
}

/// `g_t`, the posterior expected total firing rate.
pub fn expected_total_rate(belief: &GaussianBelief, enc: &EncoderParams) -> Result<f64, FilterError> {
    let (center, pop_cov) = enc.gaussian_population()?;
    let hs = &enc.observation * belief.cov.as_matrix();
    let s_inv = enc.tuning_cov.as_matrix() + pop_cov.as_matrix() + hs * enc.observation.transpose();
    let chol = Cholesky::new(s_inv).ok_or(FilterError::NotPd { time: f64::NAN })?;
    let r = &enc.observation * &belief.mean - center;
    let pop = PopulationTerms {
        center: center.clone(),
        combined_cov: DMatrix::zeros(0, 0),
        tuning_det: enc.tuning_cov.determinant(),
        rate_scale: enc.rate_scale,
    };
    Ok(rate_from_factor(&pop, &chol, r.dot(&chol.solve(&r))))
}

/// `(dμ/dt, dΣ/dt)` between spikes.
pub fn between_spike_derivative(
    belief: &GaussianBelief,
    model: &StateModel,
    enc: &EncoderParams,
    mode: &FilterMode,
    t: f64,
) -> Result<(DVector<f64>, SymMatrix), FilterError> {
    let d = AdfFilter::new(model, enc, mode)?.derivative(belief, t)?;
    Ok((d.mean, d.cov))
}

/// Posterior after a spike with mark `θ`.
pub fn apply_spike(
    belief: &GaussianBelief,
    mark: &DVector<f64>,
    enc: &EncoderParams,
) -> Result<GaussianBelief, FilterError> {
    let model = StateModel::new(
        crate::dynamics::Drift::Linear(DMatrix::zeros(belief.dim(), belief.dim())),
        DMatrix::zeros(belief.dim(), belief.dim()),
        DVector::zeros(belief.dim()),
        SymMatrix::zeros(belief.dim()),
    )?;
    AdfFilter::new(&model, enc, &FilterMode::UniformCoding)?.apply_spike(belief, mark)
}

pub fn run_filter(
    model: &StateModel,
    enc: &EncoderParams,
    train: &SpikeTrain,
    init: &GaussianBelief,
    dt: f64,
    mode: &FilterMode,
) -> Result<FilterRun, FilterError> {
    AdfFilter::new(model, enc, mode)?.run(train, init, dt)
}
