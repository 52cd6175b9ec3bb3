//! Monte Carlo harness: paired trials, encoder sweeps and reports.
//!
//! Every trial draws its path, spikes and particle noise from streams of a
//! ChaCha generator seeded by `(master seed, trial index)` only, so all
//! cells of a sweep share the same underlying randomness. Trials run on the
//! current rayon pool; results are collected in trial order and reduced
//! sequentially, so outputs do not depend on the thread count.

mod presets;
mod reports;
mod sweeps;

pub use presets::{preset, PRESETS};
pub use reports::{
    compare_uniform, validate_oracle, variance_vs_mse, CompareRow, OracleReport, OracleTrial, VarianceMseReport,
};
pub use sweeps::{center_of_max_reduction, sweep_center, sweep_population, SweepCell, SweepResult};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::belief::GaussianBelief;
use crate::config::ExperimentConfig;
use crate::dynamics::{simulate_path_with, DynamicsError, StatePath};
use crate::filter::{run_filter, FilterError, FilterMode};
use crate::linalg::SymMatrix;
use crate::oracle::{run_particle_filter_with, OracleError};
use crate::spikes::{generate_spikes_with, EncoderError, EncoderParams, Population, SpikeTrain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialFailure {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: TrialFailure },
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    mix(mix(master) ^ trial as u64)
}

const PATH_STREAM: u64 = 0;
const SPIKE_STREAM: u64 = 1;
const PARTICLE_STREAM: u64 = 2;

fn trial_rng(master: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(master, trial));
    rng.set_stream(stream);
    rng
}

/// Which filters a trial runs on its shared spike train.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOptions {
    pub adf: Option<FilterMode>,
    pub uniform: bool,
    pub particles: Option<usize>,
    /// Keep the per-node path, spikes and beliefs in the record.
    pub keep_series: bool,
}

impl TrialOptions {
    pub fn adf_only() -> Self {
        TrialOptions {
            adf: Some(FilterMode::Full),
            uniform: false,
            particles: None,
            keep_series: false,
        }
    }
}

/// Window averages of one filter's output against the true path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    /// `∫ ‖μ_t − X_t‖² dt` over the window
    pub integrated_se: f64,
    /// window mean of `‖μ_t − X_t‖²`
    pub mean_se: f64,
    /// window mean of `tr Σ_t`
    pub mean_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    pub stats: WindowStats,
    pub beliefs: Vec<GaussianBelief>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub spike_count: usize,
    pub adf: Option<FilterTrace>,
    pub uniform: Option<FilterTrace>,
    pub pf: Option<FilterTrace>,
    /// Present when series were requested.
    pub path: Option<StatePath>,
    pub train: Option<SpikeTrain>,
}

/// Trapezoid weights for the grid nodes inside `[lo, hi]`.
pub(crate) fn window_weights(times: &[f64], window: (f64, f64)) -> Vec<(usize, f64)> {
    let tol = 1e-9;
    let idx: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] >= window.0 - tol && times[k] <= window.1 + tol)
        .collect();
    let mut w = vec![0.0; idx.len()];
    for j in 1..idx.len() {
        let h = times[idx[j]] - times[idx[j - 1]];
        w[j - 1] += 0.5 * h;
        w[j] += 0.5 * h;
    }
    idx.into_iter().zip(w).collect()
}

pub(crate) fn squared_error(b: &GaussianBelief, x: &DVector<f64>) -> f64 {
    (&b.mean - x).norm_squared()
}

fn window_stats(path: &StatePath, beliefs: &[GaussianBelief], window: (f64, f64)) -> WindowStats {
    let weights = window_weights(&path.times, window);
    let span: f64 = weights.iter().map(|(_, w)| w).sum();
    let (mut se, mut var) = (0.0, 0.0);
    for &(k, w) in &weights {
        se += w * squared_error(&beliefs[k], &path.states[k]);
        var += w * beliefs[k].trace();
    }
    WindowStats {
        integrated_se: se,
        mean_se: se / span,
        mean_variance: var / span,
    }
}

/// The filter's prior: the model's initial law.
pub fn filter_prior(cfg: &ExperimentConfig) -> GaussianBelief {
    GaussianBelief::new(cfg.model.initial_mean.clone(), cfg.model.initial_cov.clone())
}

/// Simulates the path and spikes of one trial; `enc` is the encoder that
/// generates the spikes.
pub fn trial_observations(
    cfg: &ExperimentConfig,
    enc: &EncoderParams,
    trial: usize,
) -> Result<(StatePath, SpikeTrain), TrialFailure> {
    let sim_model = match &cfg.true_start {
        Some(x0) => cfg.model.clone().with_initial(x0.clone(), SymMatrix::zeros(x0.len()))?,
        None => cfg.model.clone(),
    };
    let path = simulate_path_with(
        &sim_model,
        cfg.horizon,
        cfg.dt,
        &mut trial_rng(cfg.seed, trial, PATH_STREAM),
    )?;
    let train = generate_spikes_with(enc, &path, &mut trial_rng(cfg.seed, trial, SPIKE_STREAM))?;
    Ok((path, train))
}

/// Simulates one trial and runs the requested filters on the same spikes.
pub fn run_trial(
    cfg: &ExperimentConfig,
    enc: &EncoderParams,
    trial: usize,
    opts: &TrialOptions,
) -> Result<TrialRecord, ExperimentError> {
    run_trial_inner(cfg, enc, trial, opts).map_err(|source| ExperimentError::Trial { trial, source })
}

fn run_trial_inner(
    cfg: &ExperimentConfig,
    enc: &EncoderParams,
    trial: usize,
    opts: &TrialOptions,
) -> Result<TrialRecord, TrialFailure> {
    let (path, train) = trial_observations(cfg, enc, trial)?;
    let prior = filter_prior(cfg);
    let trace = |beliefs: Vec<GaussianBelief>| FilterTrace {
        stats: window_stats(&path, &beliefs, cfg.window),
        beliefs: if opts.keep_series { beliefs } else { Vec::new() },
    };
    let adf = match &opts.adf {
        Some(mode) => Some(trace(
            run_filter(&cfg.model, enc, &train, &prior, cfg.dt, mode)?.beliefs,
        )),
        None => None,
    };
    let uniform = if opts.uniform {
        Some(trace(
            run_filter(&cfg.model, enc, &train, &prior, cfg.dt, &FilterMode::UniformCoding)?.beliefs,
        ))
    } else {
        None
    };
    let pf = match opts.particles {
        Some(count) => {
            let mut rng = trial_rng(cfg.seed, trial, PARTICLE_STREAM);
            Some(trace(
                run_particle_filter_with(&cfg.model, enc, &train, count, cfg.dt, &mut rng)?.beliefs,
            ))
        }
        None => None,
    };
    Ok(TrialRecord {
        trial,
        spike_count: train.len(),
        adf,
        uniform,
        pf,
        path: opts.keep_series.then_some(path),
        train: opts.keep_series.then_some(train),
    })
}

/// Runs `f` for every trial in parallel and returns the results in trial
/// order.
pub(crate) fn map_trials<T: Send>(trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..trials).into_par_iter().map(f).collect()
}

/// Encoder with a scalar-valued parameter replaced. Covariance values are
/// applied as scaled identities and the center as a constant vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EncoderKnob {
    Center(f64),
    Rate(f64),
    TuningVar(f64),
    PopulationVar(f64),
}

pub fn adjust_encoder(enc: &EncoderParams, knobs: &[EncoderKnob]) -> Result<EncoderParams, EncoderError> {
    let m = enc.mark_dim();
    let mut tuning = enc.tuning_cov.clone();
    let mut rate = enc.rate_scale;
    let mut population = enc.population.clone();
    for knob in knobs {
        match (*knob, &mut population) {
            (EncoderKnob::Rate(v), _) => rate = v,
            (EncoderKnob::TuningVar(v), _) => tuning = SymMatrix::scaled_identity(m, v),
            (EncoderKnob::Center(v), Population::Gaussian { center, .. }) => *center = DVector::from_element(m, v),
            (EncoderKnob::PopulationVar(v), Population::Gaussian { cov, .. }) => {
                *cov = SymMatrix::scaled_identity(m, v)
            }
            (EncoderKnob::Center(_) | EncoderKnob::PopulationVar(_), _) => {
                return Err(EncoderError::RequiresGaussianPopulation)
            }
        }
    }
    EncoderParams::new(enc.observation.clone(), tuning, rate, population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(text).unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..1000).map(|t| trial_seed(7, t)).collect();
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn window_weights_integrate_length() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let w = window_weights(&times, (5.0, 10.0));
        assert_eq!(w.first().unwrap().0, 50);
        assert_eq!(w.last().unwrap().0, 100);
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        assert!((total - 5.0).abs() < 1e-12);
        let linear: f64 = w.iter().map(|&(k, v)| v * times[k]).sum();
        assert!((linear - 37.5).abs() < 1e-9);
    }

    #[test]
    fn trials_are_reproducible() {
        let c = cfg("model.a = -0.1\nmodel.d = 0.5\nmodel.init = steady\nencoder.lambda0 = 20\nrun.horizon = 2\nrun.window = [1, 2]\nrun.seed = 3\n");
        let opts = TrialOptions {
            adf: Some(FilterMode::Full),
            uniform: true,
            particles: Some(200),
            keep_series: true,
        };
        let a = run_trial(&c, &c.encoder, 4, &opts).unwrap();
        let b = run_trial(&c, &c.encoder, 4, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.path, run_trial(&c, &c.encoder, 5, &opts).unwrap().path);
    }

    #[test]
    fn paths_are_shared_across_encoders() {
        let c = cfg("model.a = -1\nmodel.d = 0.5\nmodel.init = steady\nrun.horizon = 1\nrun.window = [0.5, 1]\n");
        let other = adjust_encoder(&c.encoder, &[EncoderKnob::Center(0.7), EncoderKnob::Rate(80.0)]).unwrap();
        let keep = TrialOptions {
            keep_series: true,
            ..TrialOptions::adf_only()
        };
        let a = run_trial(&c, &c.encoder, 0, &keep).unwrap();
        let b = run_trial(&c, &other, 0, &keep).unwrap();
        assert_eq!(a.path, b.path);
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn zero_rate_uniform_and_vanishing_full_agree() {
        // λ⁰ = 0: no spikes and no g terms; full filter with a huge
        // population variance has vanishing g terms
        let c = cfg("model.a = -0.1\nmodel.d = 0.5\nmodel.init = steady\nencoder.lambda0 = 0\nencoder.sigma_pop2 = 1e6\nrun.horizon = 10\n");
        let opts = TrialOptions {
            adf: Some(FilterMode::Full),
            uniform: true,
            particles: None,
            keep_series: true,
        };
        let r = run_trial(&c, &c.encoder, 0, &opts).unwrap();
        assert_eq!(r.spike_count, 0);
        let (a, u) = (r.adf.unwrap(), r.uniform.unwrap());
        assert_eq!(a.stats, u.stats);
        let loud = adjust_encoder(&c.encoder, &[EncoderKnob::Rate(10.0)]).unwrap();
        let empty = SpikeTrain::empty(10.0, 1);
        let prior = filter_prior(&c);
        let full = run_filter(&c.model, &loud, &empty, &prior, c.dt, &FilterMode::Full).unwrap();
        let uni = run_filter(&c.model, &loud, &empty, &prior, c.dt, &FilterMode::UniformCoding).unwrap();
        let gap = full
            .beliefs
            .iter()
            .zip(&uni.beliefs)
            .map(|(x, y)| {
                (x.mean[0] - y.mean[0])
                    .abs()
                    .max((x.cov.get(0, 0) - y.cov.get(0, 0)).abs())
            })
            .fold(0.0, f64::max);
        assert!(gap < 1e-6, "gap {gap}");
    }

    #[test]
    fn fixed_state_with_high_rate_is_learned() {
        let c = cfg("model.a = 0\nmodel.d = 0\nmodel.sigma0 = 1\nmodel.x0 = 0.5\nencoder.sigma_pop2 = 0.5\nencoder.sigma_tc2 = 0.1\nencoder.lambda0 = 200\nrun.trials = 10\n");
        let opts = TrialOptions {
            adf: Some(FilterMode::Full),
            uniform: false,
            particles: None,
            keep_series: false,
        };
        let se: Vec<f64> = map_trials(c.trials, |t| {
            run_trial(&c, &c.encoder, t, &opts).unwrap().adf.unwrap().stats.mean_se
        });
        assert!(mean(&se) < 0.01, "{}", mean(&se));
    }

    #[test]
    fn adjust_encoder_rejects_center_on_uniform() {
        let enc = EncoderParams::uniform_scalar(0.1, 5.0).unwrap();
        assert!(adjust_encoder(&enc, &[EncoderKnob::Rate(1.0)]).is_ok());
        assert_eq!(
            adjust_encoder(&enc, &[EncoderKnob::Center(1.0)]).unwrap_err(),
            EncoderError::RequiresGaussianPopulation
        );
    }
}
