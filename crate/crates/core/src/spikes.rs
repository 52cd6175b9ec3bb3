//! Sensory population model and exact simulation of the marked point process
//! it emits.
//!
//! A neuron with preferred stimulus `θ` fires at rate
//! `λ⁰ f(θ) exp(−½‖Hx − θ‖²_{Σ_tc⁻¹})` where `f` is the population density.
//! Spikes are generated in continuous time by thinning a homogeneous Poisson
//! process whose rate bounds the total intensity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::dynamics::{StatePath, MAX_DIM};
use crate::linalg::{AlgebraError, SymMatrix};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("rate scale must be finite and nonnegative, got {0}")]
    InvalidRate(f64),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("finite population has no neurons")]
    EmptyPopulation,
    #[error("operation requires a Gaussian population density")]
    RequiresGaussianPopulation,
    #[error("spike times must be strictly increasing and inside [0, horizon)")]
    InvalidSpikeTrain,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Distribution of preferred stimuli across the population.
#[derive(Clone, Debug, PartialEq)]
pub enum Population {
    /// `f(θ) = N(θ; center, cov)`.
    Gaussian { center: DVector<f64>, cov: SymMatrix },
    /// `M` neurons at fixed preferred stimuli, each with peak rate `λ⁰/M`.
    Finite(Vec<DVector<f64>>),
    /// Preferred stimuli covering the space uniformly: the factor `f(θ)` is
    /// dropped, so `λ⁰` is a rate per unit stimulus volume.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `H`, m×n.
    pub observation: DMatrix<f64>,
    /// `Σ_tc`, m×m.
    pub tuning_cov: SymMatrix,
    /// `λ⁰`
    pub rate_scale: f64,
    pub population: Population,
}

impl EncoderParams {
    pub fn new(
        observation: DMatrix<f64>,
        tuning_cov: SymMatrix,
        rate_scale: f64,
        population: Population,
    ) -> Result<Self, EncoderError> {
        let (m, n) = observation.shape();
        if m == 0 || m > n || n > MAX_DIM {
            return Err(EncoderError::DimensionMismatch {
                what: "observation matrix",
                expected: n.min(MAX_DIM),
                found: m,
            });
        }
        if !(rate_scale >= 0.0) || !rate_scale.is_finite() {
            return Err(EncoderError::InvalidRate(rate_scale));
        }
        if tuning_cov.dim() != m {
            return Err(EncoderError::DimensionMismatch {
                what: "tuning covariance",
                expected: m,
                found: tuning_cov.dim(),
            });
        }
        tuning_cov.cholesky()?;
        match &population {
            Population::Gaussian { center, cov } => {
                if center.len() != m || cov.dim() != m {
                    return Err(EncoderError::DimensionMismatch {
                        what: "population density",
                        expected: m,
                        found: center.len(),
                    });
                }
                cov.cholesky()?;
            }
            Population::Finite(neurons) => {
                if neurons.is_empty() {
                    return Err(EncoderError::EmptyPopulation);
                }
                if let Some(bad) = neurons.iter().find(|t| t.len() != m) {
                    return Err(EncoderError::DimensionMismatch {
                        what: "preferred stimulus",
                        expected: m,
                        found: bad.len(),
                    });
                }
            }
            Population::Uniform => {}
        }
        Ok(EncoderParams {
            observation,
            tuning_cov,
            rate_scale,
            population,
        })
    }

    /// Scalar state observed directly (`H = 1`) by a Gaussian population.
    pub fn gaussian_scalar(center: f64, pop_var: f64, tuning_var: f64, rate_scale: f64) -> Result<Self, EncoderError> {
        Self::new(
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::scalar(tuning_var),
            rate_scale,
            Population::Gaussian {
                center: DVector::from_element(1, center),
                cov: SymMatrix::scalar(pop_var),
            },
        )
    }

    pub fn uniform_scalar(tuning_var: f64, rate_scale: f64) -> Result<Self, EncoderError> {
        Self::new(
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::scalar(tuning_var),
            rate_scale,
            Population::Uniform,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.observation.ncols()
    }

    pub fn mark_dim(&self) -> usize {
        self.observation.nrows()
    }

    /// `(c, Σ_pop)` of a Gaussian population.
    pub fn gaussian_population(&self) -> Result<(&DVector<f64>, &SymMatrix), EncoderError> {
        match &self.population {
            Population::Gaussian { center, cov } => Ok((center, cov)),
            _ => Err(EncoderError::RequiresGaussianPopulation),
        }
    }

    pub fn rate_model(&self) -> Result<RateModel, EncoderError> {
        RateModel::new(self)
    }
}

/// Total rate `Λ(x) = ∫ λ(θ, x) dθ`.
pub fn total_rate(enc: &EncoderParams, x: &DVector<f64>) -> Result<f64, EncoderError> {
    if x.len() != enc.state_dim() {
        return Err(EncoderError::DimensionMismatch {
            what: "state",
            expected: enc.state_dim(),
            found: x.len(),
        });
    }
    Ok(enc.rate_model()?.total_rate(x.as_slice()))
}

#[derive(Clone, Debug)]
enum RateKind {
    Gaussian {
        center: Vec<f64>,
        /// `(Σ_tc + Σ_pop)⁻¹`
        combined_precision: Vec<f64>,
        /// `λ⁰ √(det Σ_tc / det(Σ_tc + Σ_pop))`
        peak: f64,
        pop_precision: Vec<f64>,
        pop_log_norm: f64,
        /// `(F+R)⁻¹ F c`
        mark_offset: DVector<f64>,
        /// `(F+R)⁻¹ R H`
        mark_gain: DMatrix<f64>,
        /// Cholesky factor of `(F+R)⁻¹`
        mark_factor: DMatrix<f64>,
    },
    Finite {
        neurons: Vec<DVector<f64>>,
        per_neuron: f64,
    },
    Uniform {
        total: f64,
        tuning_factor: DMatrix<f64>,
    },
}

/// `Λ(x) = peak·exp(−½ P (hx − c)²)` and the spike kernel
/// `−½ R (hx − θ)²` for a scalar encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarGaussianRate {
    pub gain: f64,
    pub center: f64,
    pub combined_precision: f64,
    pub peak: f64,
    pub tuning_precision: f64,
}

/// Precomputed evaluator for the intensity of one encoder.
///
/// Works on plain slices so it can be called per particle without
/// allocating.
#[derive(Clone, Debug)]
pub struct RateModel {
    state_dim: usize,
    mark_dim: usize,
    rate_scale: f64,
    observation: Vec<f64>,
    tuning_precision: Vec<f64>,
    kind: RateKind,
}

impl RateModel {
    pub fn new(enc: &EncoderParams) -> Result<Self, EncoderError> {
        let m = enc.mark_dim();
        let tuning_precision = enc.tuning_cov.inverse_pd()?;
        let kind = match &enc.population {
            Population::Gaussian { center, cov } => {
                let combined = enc.tuning_cov.add(cov);
                let combined_precision = combined.inverse_pd()?;
                let peak = enc.rate_scale * (enc.tuning_cov.determinant() / combined.determinant()).sqrt();
                let pop_precision = cov.inverse_pd()?;
                let pop_log_norm = -0.5 * (m as f64 * LN_2PI + cov.determinant().ln());
                let post_precision = pop_precision.add(&tuning_precision);
                let post_cov = post_precision.inverse_pd()?;
                let mark_offset = post_cov.as_matrix() * (pop_precision.as_matrix() * center);
                let mark_gain = post_cov.as_matrix() * tuning_precision.as_matrix() * &enc.observation;
                let mark_factor = post_cov.cholesky()?.l();
                RateKind::Gaussian {
                    center: center.as_slice().to_vec(),
                    combined_precision: row_major(combined_precision.as_matrix()),
                    peak,
                    pop_precision: row_major(pop_precision.as_matrix()),
                    pop_log_norm,
                    mark_offset,
                    mark_gain,
                    mark_factor,
                }
            }
            Population::Finite(neurons) => RateKind::Finite {
                neurons: neurons.clone(),
                per_neuron: enc.rate_scale / neurons.len() as f64,
            },
            Population::Uniform => RateKind::Uniform {
                total: enc.rate_scale
                    * ((2.0 * std::f64::consts::PI).powi(m as i32) * enc.tuning_cov.determinant()).sqrt(),
                tuning_factor: enc.tuning_cov.cholesky()?.l(),
            },
        };
        Ok(RateModel {
            state_dim: enc.state_dim(),
            mark_dim: m,
            rate_scale: enc.rate_scale,
            observation: row_major(&enc.observation),
            tuning_precision: row_major(tuning_precision.as_matrix()),
            kind,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    fn observe(&self, x: &[f64], out: &mut [f64; MAX_DIM]) {
        let n = self.state_dim;
        for (i, o) in out.iter_mut().enumerate().take(self.mark_dim) {
            let row = &self.observation[i * n..(i + 1) * n];
            *o = row.iter().zip(x).map(|(h, v)| h * v).sum();
        }
    }

    /// `Λ(x)`
    pub fn total_rate(&self, x: &[f64]) -> f64 {
        let mut hx = [0.0; MAX_DIM];
        self.observe(x, &mut hx);
        let m = self.mark_dim;
        match &self.kind {
            RateKind::Gaussian {
                center,
                combined_precision,
                peak,
                ..
            } => {
                let mut r = [0.0; MAX_DIM];
                for i in 0..m {
                    r[i] = hx[i] - center[i];
                }
                peak * (-0.5 * quad(combined_precision, &r[..m])).exp()
            }
            RateKind::Finite { neurons, per_neuron } => {
                per_neuron
                    * neurons
                        .iter()
                        .map(|theta| (self.log_kernel_observed(&hx[..m], theta.as_slice())).exp())
                        .sum::<f64>()
            }
            RateKind::Uniform { total, .. } => *total,
        }
    }

    /// Coefficients of a scalar state with a scalar Gaussian population, for
    /// callers that evaluate the rate in a tight loop.
    pub fn scalar_gaussian(&self) -> Option<ScalarGaussianRate> {
        match &self.kind {
            RateKind::Gaussian {
                center,
                combined_precision,
                peak,
                ..
            } if self.state_dim == 1 && self.mark_dim == 1 => Some(ScalarGaussianRate {
                gain: self.observation[0],
                center: center[0],
                combined_precision: combined_precision[0],
                peak: *peak,
                tuning_precision: self.tuning_precision[0],
            }),
            _ => None,
        }
    }

    /// Upper bound on `Λ(x)` over all states.
    pub fn peak_total_rate(&self) -> f64 {
        match &self.kind {
            RateKind::Gaussian { peak, .. } => *peak,
            RateKind::Finite { .. } => self.rate_scale,
            RateKind::Uniform { total, .. } => *total,
        }
    }

    fn log_kernel_observed(&self, hx: &[f64], theta: &[f64]) -> f64 {
        let mut r = [0.0; MAX_DIM];
        for i in 0..self.mark_dim {
            r[i] = hx[i] - theta[i];
        }
        -0.5 * quad(&self.tuning_precision, &r[..self.mark_dim])
    }

    /// `−½‖Hx − θ‖²_{Σ_tc⁻¹}`, the state-dependent part of a spike's
    /// log-likelihood.
    pub fn log_tuning_kernel(&self, x: &[f64], theta: &[f64]) -> f64 {
        let mut hx = [0.0; MAX_DIM];
        self.observe(x, &mut hx);
        self.log_kernel_observed(&hx[..self.mark_dim], theta)
    }

    /// `ln λ(θ, x)`; for a finite population `θ` must be one of the neurons'
    /// preferred stimuli.
    pub fn log_intensity(&self, theta: &[f64], x: &[f64]) -> f64 {
        let kernel = self.log_tuning_kernel(x, theta);
        match &self.kind {
            RateKind::Gaussian {
                center,
                pop_precision,
                pop_log_norm,
                ..
            } => {
                let mut r = [0.0; MAX_DIM];
                for i in 0..self.mark_dim {
                    r[i] = theta[i] - center[i];
                }
                self.rate_scale.ln() + pop_log_norm - 0.5 * quad(pop_precision, &r[..self.mark_dim]) + kernel
            }
            RateKind::Finite { per_neuron, .. } => per_neuron.ln() + kernel,
            RateKind::Uniform { .. } => self.rate_scale.ln() + kernel,
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `vᵀ P v` with `P` stored row-major.
fn quad(p: &[f64], v: &[f64]) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for i in 0..m {
        let row = &p[i * m..(i + 1) * m];
        acc += v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spike {
    pub time: f64,
    pub mark: DVector<f64>,
}

/// Time-ordered marked events on `[0, horizon)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    events: Vec<Spike>,
    horizon: f64,
    mark_dim: usize,
}

impl SpikeTrain {
    pub fn new(events: Vec<Spike>, horizon: f64, mark_dim: usize) -> Result<Self, EncoderError> {
        let mut prev = f64::NEG_INFINITY;
        for e in &events {
            if !(e.time > prev) || e.time < 0.0 || e.time >= horizon {
                return Err(EncoderError::InvalidSpikeTrain);
            }
            if e.mark.len() != mark_dim {
                return Err(EncoderError::DimensionMismatch {
                    what: "spike mark",
                    expected: mark_dim,
                    found: e.mark.len(),
                });
            }
            prev = e.time;
        }
        Ok(SpikeTrain {
            events,
            horizon,
            mark_dim,
        })
    }

    pub fn empty(horizon: f64, mark_dim: usize) -> Self {
        SpikeTrain {
            events: Vec::new(),
            horizon,
            mark_dim,
        }
    }

    pub fn events(&self) -> &[Spike] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of events with `lo ≤ t < hi`.
    pub fn count_between(&self, lo: f64, hi: f64) -> usize {
        self.events.iter().filter(|e| e.time >= lo && e.time < hi).count()
    }
}

/// Draws the observation process for `path`, reproducible from `seed`.
pub fn generate_spikes(enc: &EncoderParams, path: &StatePath, seed: u64) -> Result<SpikeTrain, EncoderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_spikes_with(enc, path, &mut rng)
}

pub fn generate_spikes_with<R: Rng + ?Sized>(
    enc: &EncoderParams,
    path: &StatePath,
    rng: &mut R,
) -> Result<SpikeTrain, EncoderError> {
    let model = enc.rate_model()?;
    if path.states[0].len() != model.state_dim() {
        return Err(EncoderError::DimensionMismatch {
            what: "path state",
            expected: model.state_dim(),
            found: path.states[0].len(),
        });
    }
    let horizon = path.horizon();
    let m = model.mark_dim();
    let bound = model.peak_total_rate();
    let mut events: Vec<Spike> = Vec::new();
    if !(bound > 0.0) {
        return SpikeTrain::new(events, horizon, m);
    }
    let mut t = 0.0;
    loop {
        t += rng.sample::<f64, _>(Exp1) / bound;
        if t >= horizon {
            break;
        }
        let x = path.state_at(t);
        let mark = match &model.kind {
            RateKind::Gaussian {
                peak,
                mark_offset,
                mark_gain,
                mark_factor,
                ..
            } => {
                let accept = model.total_rate(x.as_slice()) / peak;
                if rng.random::<f64>() >= accept {
                    continue;
                }
                let xi = standard_normal_vec(m, rng);
                mark_offset + mark_gain * x + mark_factor * xi
            }
            RateKind::Finite { neurons, .. } => {
                // superposition of M neurons with bound λ⁰/M each
                let pick = rng.random_range(0..neurons.len());
                let theta = &neurons[pick];
                let accept = model.log_tuning_kernel(x.as_slice(), theta.as_slice()).exp();
                if rng.random::<f64>() >= accept {
                    continue;
                }
                theta.clone()
            }
            RateKind::Uniform { tuning_factor, .. } => {
                let xi = standard_normal_vec(m, rng);
                &enc.observation * x + tuning_factor * xi
            }
        };
        let mut time = t;
        if let Some(last) = events.last() {
            if time <= last.time {
                time = last.time.next_up();
                if time >= horizon {
                    break;
                }
            }
        }
        events.push(Spike { time, mark });
    }
    SpikeTrain::new(events, horizon, m)
}

fn standard_normal_vec<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

/// Compensator increments `∫ Λ(X_s) ds` between consecutive spikes, using
/// the same piecewise-constant path as the generator. Under a correct
/// generator these are i.i.d. Exp(1).
pub fn rescaled_intervals(enc: &EncoderParams, path: &StatePath, train: &SpikeTrain) -> Result<Vec<f64>, EncoderError> {
    let model = enc.rate_model()?;
    let rates: Vec<f64> = path.states.iter().map(|x| model.total_rate(x.as_slice())).collect();
    // cumulative compensator at grid nodes
    let mut cumulative = Vec::with_capacity(rates.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for k in 1..path.times.len() {
        acc += rates[k - 1] * (path.times[k] - path.times[k - 1]);
        cumulative.push(acc);
    }
    let compensator = |t: f64| {
        let k = path.index_at(t);
        cumulative[k] + rates[k] * (t - path.times[k])
    };
    let mut prev = 0.0;
    Ok(train
        .events()
        .iter()
        .map(|e| {
            let c = compensator(e.time);
            let d = c - prev;
            prev = c;
            d
        })
        .collect())
}

/// Histogram of the first mark coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub horizon: f64,
}

impl MarkHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }

    /// Empirical spike rate density per unit time and unit mark.
    pub fn rates(&self) -> Vec<f64> {
        let scale = self.horizon * self.bin_width();
        self.counts.iter().map(|&c| c as f64 / scale).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Mark histogram over the observed range of marks (`[0, 1]` when empty).
pub fn empirical_rate_histogram(train: &SpikeTrain, bins: usize) -> MarkHistogram {
    assert!(bins >= 1, "need at least one bin");
    let marks: Vec<f64> = train.events().iter().map(|e| e.mark[0]).collect();
    let (mut lo, mut hi) = marks
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if marks.is_empty() {
        lo = 0.0;
        hi = 1.0;
    } else if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    histogram_in_range(train, bins, lo, hi)
}

pub fn histogram_in_range(train: &SpikeTrain, bins: usize, lo: f64, hi: f64) -> MarkHistogram {
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for e in train.events() {
        let v = e.mark[0];
        if v < lo || v > hi {
            continue;
        }
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    MarkHistogram {
        lo,
        hi,
        counts,
        horizon: train.horizon(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn total_rate_matches_quadrature() {
        let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, 10.0).unwrap();
        let model = enc.rate_model().unwrap();
        for x in [0.0, 0.7, -1.9] {
            let oracle = simpson(
                |th| {
                    10.0 * (-0.5 * th * th).exp() / (2.0 * std::f64::consts::PI).sqrt()
                        * (-(x - th) * (x - th) / 0.4).exp()
                },
                -10.0,
                10.0,
                20_000,
            );
            assert_relative_eq!(model.total_rate(&[x]), oracle, max_relative = 1e-6);
            assert_relative_eq!(
                model.log_intensity(&[0.3], &[x]).exp(),
                10.0 * (-0.5f64 * 0.09).exp() / (2.0 * std::f64::consts::PI).sqrt()
                    * (-(x - 0.3f64).powi(2) / 0.4).exp(),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(model.total_rate(&[0.0]), 10.0 * (0.2f64 / 1.2).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(model.total_rate(&[0.0]), 4.08248290463863, epsilon = 1e-10);
        assert!(model.total_rate(&[1e3]) == 0.0);
    }

    #[test]
    fn uniform_limit_is_state_independent() {
        // λ⁰ / √σ_pop² fixed while σ_pop² grows
        let density = 3.0;
        let mut spread = Vec::new();
        for k in [1e2, 1e4, 1e6] {
            let enc =
                EncoderParams::gaussian_scalar(0.0, k, 0.2, density * (2.0 * std::f64::consts::PI * k).sqrt()).unwrap();
            let m = enc.rate_model().unwrap();
            spread.push((m.total_rate(&[0.0]) - m.total_rate(&[3.0])).abs() / m.total_rate(&[0.0]));
        }
        assert!(spread[0] > spread[1] && spread[1] > spread[2]);
        assert!(spread[2] < 1e-5);
        let uni = EncoderParams::uniform_scalar(0.2, density)
            .unwrap()
            .rate_model()
            .unwrap();
        let lim = EncoderParams::gaussian_scalar(0.0, 1e8, 0.2, density * (2.0 * std::f64::consts::PI * 1e8).sqrt())
            .unwrap()
            .rate_model()
            .unwrap();
        assert_relative_eq!(uni.total_rate(&[1.0]), lim.total_rate(&[1.0]), max_relative = 1e-6);
    }

    #[test]
    fn zero_rate_gives_empty_train() {
        let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, 0.0).unwrap();
        let path = StatePath::constant(dvector![0.0], 10.0, 1e-2).unwrap();
        assert!(generate_spikes(&enc, &path, 1).unwrap().is_empty());
    }

    #[test]
    fn generated_trains_are_sorted_and_reproducible() {
        let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, 50.0).unwrap();
        let path = StatePath::constant(dvector![0.3], 5.0, 1e-3).unwrap();
        let a = generate_spikes(&enc, &path, 11).unwrap();
        let b = generate_spikes(&enc, &path, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.events().windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.events().iter().all(|e| e.time < 5.0));
    }

    #[test]
    fn acceptance_ratio_bounded() {
        let enc = EncoderParams::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            SymMatrix::scalar(0.3),
            20.0,
            Population::Gaussian {
                center: dvector![0.4],
                cov: SymMatrix::scalar(0.8),
            },
        )
        .unwrap();
        let m = enc.rate_model().unwrap();
        for x in [[0.0, 0.0], [0.4, 0.0], [0.0, 0.8], [-3.0, 2.0]] {
            let r = m.total_rate(&x) / m.peak_total_rate();
            assert!(r > 0.0 && r <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn finite_population_marks_are_neurons() {
        let neurons = vec![dvector![-1.0], dvector![0.0], dvector![2.0]];
        let enc = EncoderParams::new(
            DMatrix::from_element(1, 1, 1.0),
            SymMatrix::scalar(0.5),
            30.0,
            Population::Finite(neurons.clone()),
        )
        .unwrap();
        let path = StatePath::constant(dvector![0.0], 200.0, 1e-2).unwrap();
        let train = generate_spikes(&enc, &path, 5).unwrap();
        assert!(train.events().iter().all(|e| neurons.contains(&e.mark)));
        let expected = enc.rate_model().unwrap().total_rate(&[0.0]) * 200.0;
        let n = train.len() as f64;
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "{n} vs {expected}");
    }

    #[test]
    fn uniform_population_rate() {
        let enc = EncoderParams::uniform_scalar(0.2, 4.0).unwrap();
        let m = enc.rate_model().unwrap();
        assert_relative_eq!(
            m.total_rate(&[5.0]),
            4.0 * (2.0 * std::f64::consts::PI * 0.2f64).sqrt(),
            epsilon = 1e-12
        );
        let path = StatePath::constant(dvector![1.5], 500.0, 1e-2).unwrap();
        let train = generate_spikes(&enc, &path, 9).unwrap();
        let mean = train.events().iter().map(|e| e.mark[0]).sum::<f64>() / train.len() as f64;
        assert!((mean - 1.5).abs() < 4.0 * (0.2 / train.len() as f64).sqrt());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, -1.0),
            Err(EncoderError::InvalidRate(_))
        ));
        assert!(matches!(
            EncoderParams::gaussian_scalar(0.0, -1.0, 0.2, 1.0),
            Err(EncoderError::Algebra(AlgebraError::NotPd))
        ));
        assert!(EncoderParams::new(DMatrix::zeros(2, 1), SymMatrix::identity(2), 1.0, Population::Uniform).is_err());
    }

    #[test]
    fn spike_train_validation() {
        let ev = |t: f64| Spike {
            time: t,
            mark: dvector![0.0],
        };
        assert!(SpikeTrain::new(vec![ev(0.5), ev(0.5)], 1.0, 1).is_err());
        assert!(SpikeTrain::new(vec![ev(0.5), ev(1.0)], 1.0, 1).is_err());
        assert!(SpikeTrain::new(vec![ev(0.0), ev(0.2)], 1.0, 1).is_ok());
    }

    #[test]
    fn histogram_edge_cases() {
        let empty = SpikeTrain::empty(1.0, 1);
        let h = empirical_rate_histogram(&empty, 5);
        assert_eq!(h.counts, vec![0; 5]);
        let one = SpikeTrain::new(
            vec![Spike {
                time: 0.1,
                mark: dvector![0.3],
            }],
            1.0,
            1,
        )
        .unwrap();
        let h = empirical_rate_histogram(&one, 4);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 1);
    }
}
