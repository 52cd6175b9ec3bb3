//! Bootstrap particle filter for marked point-process observations.
//!
//! Used as a brute-force reference posterior. Each step propagates the
//! particles by Euler–Maruyama, multiplies their weights by
//! `exp(−Λ(x)dt) ∏ λ(θ_j, x)` and resamples systematically once the
//! effective sample size drops below half the particle count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::belief::GaussianBelief;
use crate::dynamics::{psd_factor, time_grid, Drift, DynamicsError, StateModel};
use crate::linalg::SymMatrix;
use crate::spikes::{EncoderError, EncoderParams, RateModel, ScalarGaussianRate, Spike, SpikeTrain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("all particle weights underflowed at t = {time}")]
    Degenerate { time: f64 },
    #[error("particle ensemble is empty")]
    Empty,
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
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

/// Weighted particle cloud. Particles are stored back to back in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    particles: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Equal-weight ensemble.
    pub fn new(particles: &[DVector<f64>]) -> Result<Self, OracleError> {
        let first = particles.first().ok_or(OracleError::Empty)?;
        let dim = first.len();
        let mut flat = Vec::with_capacity(dim * particles.len());
        for p in particles {
            if p.len() != dim {
                return Err(OracleError::DimensionMismatch {
                    what: "particle",
                    expected: dim,
                    found: p.len(),
                });
            }
            flat.extend_from_slice(p.as_slice());
        }
        Ok(ParticleEnsemble {
            dim,
            log_weights: vec![0.0; particles.len()],
            particles: flat,
        })
    }

    pub fn with_log_weights(particles: &[DVector<f64>], log_weights: Vec<f64>) -> Result<Self, OracleError> {
        let mut ens = Self::new(particles)?;
        if log_weights.len() != ens.count() {
            return Err(OracleError::DimensionMismatch {
                what: "log weights",
                expected: ens.count(),
                found: log_weights.len(),
            });
        }
        ens.log_weights = log_weights;
        Ok(ens)
    }

    /// `count` draws from `N(mean, cov)`.
    pub fn sample<R: Rng + ?Sized>(belief: &GaussianBelief, count: usize, rng: &mut R) -> Result<Self, OracleError> {
        if count == 0 {
            return Err(OracleError::Empty);
        }
        let dim = belief.dim();
        let factor = psd_factor(&belief.cov)?;
        let mut particles = Vec::with_capacity(dim * count);
        let mut xi = vec![0.0; dim];
        for _ in 0..count {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..dim {
                particles.push(belief.mean[i] + (0..dim).map(|j| factor[(i, j)] * xi[j]).sum::<f64>());
            }
        }
        Ok(ParticleEnsemble {
            dim,
            particles,
            log_weights: vec![0.0; count],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.log_weights.len()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Weights scaled to sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let top = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self.log_weights.iter().map(|l| (l - top).exp()).collect();
        let total = compensated_sum(&w);
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Shifts log weights so the largest is zero. Fails when no weight is
    /// finite.
    fn renormalize(&mut self, time: f64) -> Result<(), OracleError> {
        let top = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(OracleError::Degenerate { time });
        }
        self.log_weights.iter_mut().for_each(|l| *l -= top);
        Ok(())
    }

    /// `1 / Σ w_i²` for normalized weights.
    pub fn ess(&self) -> f64 {
        let w = self.weights();
        1.0 / w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Systematic resampling with a single uniform offset; weights reset to
    /// equal.
    pub fn resample_systematic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let w = self.weights();
        self.resample_with(&w, rng);
    }

    fn resample_with<R: Rng + ?Sized>(&mut self, w: &[f64], rng: &mut R) {
        let n = self.count();
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut next = Vec::with_capacity(self.particles.len());
        let mut cumulative = w[0];
        let mut src = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cumulative && src + 1 < n {
                src += 1;
                cumulative += w[src];
            }
            next.extend_from_slice(self.particle(src));
        }
        self.particles = next;
        self.log_weights.iter_mut().for_each(|l| *l = 0.0);
    }

    /// Renormalizes, writes the normalized weights into `w` and returns the
    /// ESS, all in one pass over the log weights.
    fn settle(&mut self, time: f64, w: &mut Vec<f64>) -> Result<f64, OracleError> {
        self.renormalize(time)?;
        w.clear();
        w.extend(self.log_weights.iter().map(|l| l.exp()));
        let total = compensated_sum(w);
        let mut squares = 0.0;
        for v in w.iter_mut() {
            *v /= total;
            squares += *v * *v;
        }
        Ok(1.0 / squares)
    }
}

/// Neumaier summation; plain summation drifts by ~1e-10 over 10⁶ weights.
fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Weighted mean and covariance of the ensemble.
pub fn pf_moments(ens: &ParticleEnsemble) -> GaussianBelief {
    moments_with(ens, &ens.weights())
}

fn moments_with(ens: &ParticleEnsemble, w: &[f64]) -> GaussianBelief {
    let n = ens.dim;
    let mut mean = DVector::zeros(n);
    for (i, wi) in w.iter().enumerate() {
        for (j, x) in ens.particle(i).iter().enumerate() {
            mean[j] += wi * x;
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for (i, wi) in w.iter().enumerate() {
        let p = ens.particle(i);
        for r in 0..n {
            let dr = p[r] - mean[r];
            for c in r..n {
                cov[(r, c)] += wi * dr * (p[c] - mean[c]);
            }
        }
    }
    for r in 0..n {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    GaussianBelief::new(mean, SymMatrix::symmetrize(cov))
}

/// Model, encoder and step size prepared for repeated stepping.
#[derive(Clone, Debug)]
pub struct ParticleFilter {
    model: StateModel,
    rate: RateModel,
    /// row-major `A` when the drift is linear
    linear: Option<Vec<f64>>,
    /// row-major `D√dt`
    noise_gain: Vec<f64>,
    noise_dim: usize,
    noiseless: bool,
    dt: f64,
    scalar: Option<ScalarStep>,
}

/// Scalar linear model with a scalar Gaussian population: propagation and
/// weighting fused into one pass.
#[derive(Clone, Copy, Debug)]
struct ScalarStep {
    a: f64,
    noise: f64,
    rate: ScalarGaussianRate,
}

impl ParticleFilter {
    pub fn new(model: &StateModel, enc: &EncoderParams, dt: f64) -> Result<Self, OracleError> {
        if !(dt > 0.0) {
            return Err(OracleError::InvalidStep(dt));
        }
        if enc.state_dim() != model.dim() {
            return Err(OracleError::DimensionMismatch {
                what: "encoder state dimension",
                expected: model.dim(),
                found: enc.state_dim(),
            });
        }
        let linear = match &model.drift {
            Drift::Linear(a) => Some(a.transpose().as_slice().to_vec()),
            Drift::Series(_) => None,
        };
        let gain = &model.diffusion * dt.sqrt();
        let rate = RateModel::new(enc)?;
        let scalar = match (&linear, rate.scalar_gaussian()) {
            (Some(a), Some(r)) if model.dim() == 1 && model.diffusion.ncols() == 1 && model.control.is_none() => {
                Some(ScalarStep {
                    a: a[0],
                    noise: gain[(0, 0)],
                    rate: r,
                })
            }
            _ => None,
        };
        Ok(ParticleFilter {
            rate,
            scalar,
            linear,
            noise_gain: gain.transpose().as_slice().to_vec(),
            noise_dim: model.diffusion.ncols(),
            noiseless: model.diffusion.iter().all(|&v| v == 0.0),
            model: model.clone(),
            dt,
        })
    }

    fn propagate<R: Rng + ?Sized>(&self, ens: &mut ParticleEnsemble, t: f64, rng: &mut R) {
        let n = ens.dim;
        let dt = self.dt;
        let control = self.model.control_at(t).map(|u| u.as_slice().to_vec());
        let mut xi = vec![0.0; self.noise_dim];
        let mut next = vec![0.0; n];
        for p in ens.particles.chunks_exact_mut(n) {
            match &self.linear {
                Some(a) => {
                    for i in 0..n {
                        let row = &a[i * n..(i + 1) * n];
                        next[i] = p[i] + dt * row.iter().zip(p.iter()).map(|(a, x)| a * x).sum::<f64>();
                    }
                }
                None => {
                    let f = self.model.drift.eval(&DVector::from_column_slice(p));
                    for i in 0..n {
                        next[i] = p[i] + dt * f[i];
                    }
                }
            }
            if let Some(u) = &control {
                for i in 0..n {
                    next[i] += dt * u[i];
                }
            }
            if !self.noiseless {
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let k = self.noise_dim;
                for i in 0..n {
                    let row = &self.noise_gain[i * k..(i + 1) * k];
                    next[i] += row.iter().zip(&xi).map(|(g, z)| g * z).sum::<f64>();
                }
            }
            p.copy_from_slice(&next);
        }
    }

    /// Multiplies weights by `exp(−Λ(x)·span) ∏ λ(θ_j, x)`; only the
    /// state-dependent factors are kept.
    pub fn reweight(&self, ens: &mut ParticleEnsemble, span: f64, spikes: &[Spike]) {
        let n = ens.dim;
        for (p, lw) in ens.particles.chunks_exact(n).zip(ens.log_weights.iter_mut()) {
            let mut delta = -self.rate.total_rate(p) * span;
            for s in spikes {
                delta += self.rate.log_tuning_kernel(p, s.mark.as_slice());
            }
            *lw += delta;
        }
    }

    fn advance<R: Rng + ?Sized>(&self, ens: &mut ParticleEnsemble, t: f64, span: f64, spikes: &[Spike], rng: &mut R) {
        let Some(k) = self.scalar else {
            self.propagate(ens, t, rng);
            self.reweight(ens, span, spikes);
            return;
        };
        let marks: Vec<f64> = spikes.iter().map(|s| s.mark[0]).collect();
        let r = k.rate;
        let drift = 1.0 + k.a * self.dt;
        for (x, lw) in ens.particles.iter_mut().zip(ens.log_weights.iter_mut()) {
            let mut v = drift * *x;
            if !self.noiseless {
                v += k.noise * rng.sample::<f64, _>(StandardNormal);
            }
            *x = v;
            let hx = r.gain * v;
            let off = hx - r.center;
            let mut delta = -r.peak * (-0.5 * r.combined_precision * off * off).exp() * span;
            for &m in &marks {
                delta -= 0.5 * r.tuning_precision * (hx - m) * (hx - m);
            }
            *lw += delta;
        }
    }

    /// One step from `t` to `t + dt` with the spikes that fall in `(t, t+dt]`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        ens: &mut ParticleEnsemble,
        t: f64,
        spikes: &[Spike],
        rng: &mut R,
    ) -> Result<(), OracleError> {
        self.advance(ens, t, self.dt, spikes, rng);
        let mut w = Vec::with_capacity(ens.count());
        if ens.settle(t + self.dt, &mut w)? < 0.5 * ens.count() as f64 {
            ens.resample_with(&w, rng);
        }
        Ok(())
    }
}

/// Single step with its own RNG stream seeded by `seed`.
pub fn pf_step(
    ens: &ParticleEnsemble,
    model: &StateModel,
    enc: &EncoderParams,
    dt: f64,
    spikes_in_step: &[Spike],
    seed: u64,
) -> Result<ParticleEnsemble, OracleError> {
    let pf = ParticleFilter::new(model, enc, dt)?;
    let mut next = ens.clone();
    let t = spikes_in_step.first().map_or(0.0, |s| s.time);
    pf.step(&mut next, t, spikes_in_step, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(next)
}

/// Particle moments on the grid `0, dt, …`, recorded after the spikes of
/// each step, the same convention as the ADF.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleRun {
    pub times: Vec<f64>,
    pub beliefs: Vec<GaussianBelief>,
    pub resample_count: usize,
}

pub fn run_particle_filter(
    model: &StateModel,
    enc: &EncoderParams,
    train: &SpikeTrain,
    count: usize,
    dt: f64,
    seed: u64,
) -> Result<ParticleRun, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_particle_filter_with(model, enc, train, count, dt, &mut rng)
}

pub fn run_particle_filter_with<R: Rng + ?Sized>(
    model: &StateModel,
    enc: &EncoderParams,
    train: &SpikeTrain,
    count: usize,
    dt: f64,
    rng: &mut R,
) -> Result<ParticleRun, OracleError> {
    let pf = ParticleFilter::new(model, enc, dt)?;
    let times = time_grid(train.horizon(), dt)?;
    let prior = GaussianBelief::new(model.initial_mean.clone(), model.initial_cov.clone());
    let mut ens = ParticleEnsemble::sample(&prior, count, rng)?;
    let spikes = train.events();
    let mut next = 0;
    while next < spikes.len() && spikes[next].time <= times[0] {
        next += 1;
    }
    if next > 0 {
        pf.reweight(&mut ens, 0.0, &spikes[..next]);
        ens.renormalize(times[0])?;
    }
    let mut beliefs = Vec::with_capacity(times.len());
    beliefs.push(pf_moments(&ens));
    let mut resample_count = 0;
    let mut w = Vec::with_capacity(count);
    for k in 0..times.len() - 1 {
        let first = next;
        while next < spikes.len() && spikes[next].time <= times[k + 1] {
            next += 1;
        }
        pf.advance(&mut ens, times[k], times[k + 1] - times[k], &spikes[first..next], rng);
        let ess = ens.settle(times[k + 1], &mut w)?;
        beliefs.push(moments_with(&ens, &w));
        if ess < 0.5 * ens.count() as f64 {
            ens.resample_with(&w, rng);
            resample_count += 1;
        }
    }
    Ok(ParticleRun {
        times,
        beliefs,
        resample_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikes::Population;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn scalar_particles(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| dvector![x]).collect()
    }

    #[test]
    fn spike_weight_ratio() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::uniform_scalar(0.2, 1.0).unwrap();
        let ens = ParticleEnsemble::new(&scalar_particles(&[0.0, 1.0])).unwrap();
        let spike = Spike {
            time: 0.0,
            mark: dvector![1.0],
        };
        let next = pf_step(&ens, &model, &enc, 1e-3, &[spike], 1).unwrap();
        let w = next.weights();
        assert_relative_eq!(w[1] / w[0], 2.5f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn uniform_encoder_without_spikes_keeps_weights() {
        let model = StateModel::scalar(-0.3, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::uniform_scalar(0.2, 10.0).unwrap();
        let ens =
            ParticleEnsemble::with_log_weights(&scalar_particles(&[-1.0, 0.5, 2.0]), vec![0.0, -0.4, -1.3]).unwrap();
        let next = pf_step(&ens, &model, &enc, 1e-2, &[], 3).unwrap();
        for (a, b) in ens.weights().iter().zip(next.weights()) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn survival_tilt_is_first_order() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, 10.0).unwrap();
        let xs = [0.0, 0.7, -1.5];
        let ens = ParticleEnsemble::new(&scalar_particles(&xs)).unwrap();
        let dt = 1e-6;
        let next = pf_step(&ens, &model, &enc, dt, &[], 5).unwrap();
        let w = next.weights();
        let rates: Vec<f64> = xs
            .iter()
            .map(|&x| crate::spikes::total_rate(&enc, &dvector![x]).unwrap())
            .collect();
        let mean_rate = rates.iter().sum::<f64>() / 3.0;
        for (wi, r) in w.iter().zip(&rates) {
            let first_order = (1.0 - (r - mean_rate) * dt) / 3.0;
            assert!((wi - first_order).abs() < 1e-10);
        }
    }

    #[test]
    fn moments_small_ensembles() {
        let single = ParticleEnsemble::new(&scalar_particles(&[0.7])).unwrap();
        let b = pf_moments(&single);
        assert_eq!(b.mean[0], 0.7);
        assert_eq!(b.cov.get(0, 0), 0.0);
        let pair = ParticleEnsemble::new(&scalar_particles(&[-1.0, 1.0])).unwrap();
        let b = pf_moments(&pair);
        assert_eq!(b.mean[0], 0.0);
        assert_eq!(b.cov.get(0, 0), 1.0);
    }

    #[test]
    fn moments_of_many_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ens = ParticleEnsemble::sample(&GaussianBelief::scalar(0.0, 1.0), 1_000_000, &mut rng).unwrap();
        let b = pf_moments(&ens);
        assert!(b.mean[0].abs() < 0.003);
        assert!((b.cov.get(0, 0) - 1.0).abs() < 0.005);
        let w = compensated_sum(&ens.weights());
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let mut ens =
            ParticleEnsemble::with_log_weights(&scalar_particles(&[0.0, 1.0]), vec![f64::NEG_INFINITY; 2]).unwrap();
        assert_eq!(ens.renormalize(2.0), Err(OracleError::Degenerate { time: 2.0 }));
    }

    #[test]
    fn systematic_resampling_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let lw = [0.1f64, 0.2, 0.3, 0.4].iter().map(|w| w.ln()).collect();
        let base = ParticleEnsemble::with_log_weights(&scalar_particles(&xs), lw).unwrap();
        let reps = 1000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            let mut e = base.clone();
            e.resample_systematic(&mut rng);
            for i in 0..4 {
                counts[e.particle(i)[0] as usize] += 1;
            }
            assert!(e.log_weights().iter().all(|&l| l == 0.0));
        }
        for (i, w) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
            let freq = counts[i] as f64 / (4 * reps) as f64;
            assert!((freq - w).abs() < 0.02, "{i}: {freq}");
        }
    }

    #[test]
    fn spike_posterior_matches_conjugate_update() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::uniform_scalar(0.2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 200_000;
        let ens = ParticleEnsemble::sample(&GaussianBelief::scalar(0.0, 1.0), n, &mut rng).unwrap();
        let spike = Spike {
            time: 1e-3,
            mark: dvector![1.0],
        };
        let pf = ParticleFilter::new(&model, &enc, 1e-3).unwrap();
        let mut e = ens.clone();
        pf.reweight(&mut e, 1e-3, &[spike]);
        let b = pf_moments(&e);
        let ess = e.ess();
        let se_mean = (b.cov.get(0, 0) / ess).sqrt();
        assert!((b.mean[0] - 1.0 / 1.2).abs() < 4.0 * se_mean);
        assert!((b.cov.get(0, 0) - 1.0 / 6.0).abs() < 4.0 * (2.0 / ess).sqrt() / 6.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::uniform_scalar(0.2, 1.0).unwrap();
        assert_eq!(
            ParticleFilter::new(&model, &enc, 0.0).unwrap_err(),
            OracleError::InvalidStep(0.0)
        );
        assert_eq!(ParticleEnsemble::new(&[]).unwrap_err(), OracleError::Empty);
        let two = EncoderParams::new(
            DMatrix::identity(2, 2),
            SymMatrix::identity(2),
            1.0,
            Population::Uniform,
        )
        .unwrap();
        assert!(matches!(
            ParticleFilter::new(&model, &two, 0.1),
            Err(OracleError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn noiseless_static_run_keeps_particles() {
        let model = StateModel::scalar(0.0, 0.0, 0.3, 0.5).unwrap();
        let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.2, 0.0).unwrap();
        let run = run_particle_filter(&model, &enc, &SpikeTrain::empty(0.1, 1), 2000, 0.01, 4).unwrap();
        let first = &run.beliefs[0];
        for b in &run.beliefs {
            assert_eq!(b, first);
        }
        assert_eq!(run.resample_count, 0);
    }

    #[test]
    fn scalar_fast_path_matches_general_step() {
        let model = StateModel::scalar(-0.4, 0.7, 0.2, 0.9).unwrap();
        let enc = EncoderParams::gaussian_scalar(0.3, 0.5, 0.1, 40.0).unwrap();
        let fast = ParticleFilter::new(&model, &enc, 1e-2).unwrap();
        assert!(fast.scalar.is_some());
        let mut general = fast.clone();
        general.scalar = None;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let start = ParticleEnsemble::sample(&GaussianBelief::scalar(0.2, 0.9), 500, &mut rng).unwrap();
        let spikes = [
            Spike {
                time: 0.005,
                mark: dvector![0.4],
            },
            Spike {
                time: 0.007,
                mark: dvector![-0.1],
            },
        ];
        let (mut a, mut b) = (start.clone(), start);
        fast.advance(&mut a, 0.0, 1e-2, &spikes, &mut ChaCha8Rng::seed_from_u64(5));
        general.advance(&mut b, 0.0, 1e-2, &spikes, &mut ChaCha8Rng::seed_from_u64(5));
        for i in 0..500 {
            assert_relative_eq!(a.particle(i)[0], b.particle(i)[0], max_relative = 1e-13);
            assert_relative_eq!(
                a.log_weights()[i],
                b.log_weights()[i],
                max_relative = 1e-12,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn reweighting_can_undo_an_earlier_tilt() {
        let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
        let enc = EncoderParams::uniform_scalar(0.2, 1.0).unwrap();
        let pf = ParticleFilter::new(&model, &enc, 1e-3).unwrap();
        let mut ens = ParticleEnsemble::with_log_weights(&scalar_particles(&[0.0, 1.0]), vec![0.0, -2.5]).unwrap();
        let before = ens.ess();
        pf.reweight(
            &mut ens,
            0.0,
            &[Spike {
                time: 0.0,
                mark: dvector![1.0],
            }],
        );
        assert!(ens.ess() > before);
        assert_relative_eq!(ens.ess(), 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn ess_never_increases_from_equal_weights(
            xs in prop::collection::vec(-3.0..3.0f64, 2..40),
            theta in -2.0..2.0f64,
            span in 0.0..0.5f64,
            with_spike in any::<bool>(),
        ) {
            let model = StateModel::scalar(0.0, 0.0, 0.0, 1.0).unwrap();
            let enc = EncoderParams::gaussian_scalar(0.0, 1.0, 0.3, 20.0).unwrap();
            let pf = ParticleFilter::new(&model, &enc, 1e-3).unwrap();
            let mut ens = ParticleEnsemble::new(&scalar_particles(&xs)).unwrap();
            let before = ens.ess();
            let spikes: Vec<Spike> = if with_spike { vec![Spike { time: 0.0, mark: dvector![theta] }] } else { vec![] };
            pf.reweight(&mut ens, span, &spikes);
            prop_assert!(ens.ess() <= before * (1.0 + 1e-12));
            prop_assert!(ens.ess() > 0.0);
        }
    }
}
