//! Paired filter comparisons and error calibration reports.

use super::{
    adjust_encoder, map_trials, run_trial, squared_error, window_weights, EncoderKnob, ExperimentError, TrialOptions,
};
use crate::config::{ExperimentConfig, FilterChoice};
use crate::dynamics::time_grid;
use crate::filter::FilterMode;
use crate::io::Table;
use crate::stats::{combined_se, standard_error, Estimate};

/// Integrated squared error of both filters at one population variance.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub sigma_pop2: f64,
    pub adf: Estimate,
    pub uniform: Estimate,
    /// `uniform − adf`
    pub gap: f64,
    pub combined_se: f64,
    /// standard error of the per-trial differences
    pub paired_se: f64,
    pub failures: usize,
}

impl CompareRow {
    pub fn table(rows: &[CompareRow]) -> Table {
        let mut t = Table::new([
            "sigma_pop2",
            "adf_mean",
            "adf_se",
            "uniform_mean",
            "uniform_se",
            "gap",
            "combined_se",
            "paired_se",
            "failures",
        ]);
        for r in rows {
            t.push(vec![
                r.sigma_pop2,
                r.adf.mean,
                r.adf.se,
                r.uniform.mean,
                r.uniform.se,
                r.gap,
                r.combined_se,
                r.paired_se,
                r.failures as f64,
            ]);
        }
        t
    }
}

/// Runs the full and the uniform coding filter on the same spike trains
/// for every `sweep.sigma_pop2` value (or the base encoder's).
pub fn compare_uniform(cfg: &ExperimentConfig) -> Result<Vec<CompareRow>, ExperimentError> {
    let axis = if cfg.sweep.sigma_pop2.is_empty() {
        let (_, cov) = cfg.encoder.gaussian_population()?;
        vec![cov.get(0, 0)]
    } else {
        cfg.sweep.sigma_pop2.clone()
    };
    let opts = TrialOptions {
        adf: Some(FilterMode::Full),
        uniform: true,
        particles: None,
        keep_series: false,
    };
    let mut rows = Vec::with_capacity(axis.len());
    for &v in &axis {
        let enc = adjust_encoder(&cfg.encoder, &[EncoderKnob::PopulationVar(v)])?;
        let results = map_trials(cfg.trials, |t| run_trial(cfg, &enc, t, &opts));
        let pairs: Vec<(f64, f64)> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|r| {
                let a = r.adf.as_ref().expect("adf requested").stats.integrated_se;
                let u = r.uniform.as_ref().expect("uniform requested").stats.integrated_se;
                (a, u)
            })
            .collect();
        let adf = Estimate::of(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let uniform = Estimate::of(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let diffs: Vec<f64> = pairs.iter().map(|(a, u)| u - a).collect();
        rows.push(CompareRow {
            sigma_pop2: v,
            gap: uniform.mean - adf.mean,
            combined_se: combined_se(&adf, &uniform),
            paired_se: standard_error(&diffs),
            adf,
            uniform,
            failures: results.len() - pairs.len(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMseReport {
    pub times: Vec<f64>,
    /// mean over trials of `‖μ_t − X_t‖²`
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
    /// mean over trials of `tr Σ_t`
    pub variance: Vec<f64>,
    pub variance_se: Vec<f64>,
    /// mean over trials of `SE_t / tr Σ_t`
    pub mean_ratio: Vec<f64>,
    pub mean_ratio_se: Vec<f64>,
    /// window mean of `mse` over window mean of `variance`
    pub steady_ratio: f64,
    pub trials_ok: usize,
    pub failures: usize,
}

impl VarianceMseReport {
    pub fn ratio_of_means(&self) -> Vec<f64> {
        self.mse.iter().zip(&self.variance).map(|(m, v)| m / v).collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "t",
            "mse",
            "mse_se",
            "variance",
            "variance_se",
            "ratio_of_means",
            "mean_ratio",
            "mean_ratio_se",
        ]);
        let ratio = self.ratio_of_means();
        for k in 0..self.times.len() {
            t.push(vec![
                self.times[k],
                self.mse[k],
                self.mse_se[k],
                self.variance[k],
                self.variance_se[k],
                ratio[k],
                self.mean_ratio[k],
                self.mean_ratio_se[k],
            ]);
        }
        t
    }
}

/// Running sums of a per-node quantity and its square.
struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            sum: vec![0.0; len],
            sq: vec![0.0; len],
        }
    }

    fn add(&mut self, k: usize, x: f64) {
        self.sum[k] += x;
        self.sq[k] += x * x;
    }

    /// Means and standard errors for `n` samples.
    fn finish(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(&s, &q)| {
                let m = s / nf;
                let var = ((q - nf * m * m) / (nf - 1.0)).max(0.0);
                (m, (var / nf).sqrt())
            })
            .unzip()
    }
}

const CHUNK: usize = 64;

/// Per-node squared error against posterior variance of the configured
/// filter mode, averaged across trials.
pub fn variance_vs_mse(cfg: &ExperimentConfig) -> Result<VarianceMseReport, ExperimentError> {
    let times = time_grid(cfg.horizon, cfg.dt)?;
    let mode = match cfg.filter {
        FilterChoice::Full => FilterMode::Full,
        FilterChoice::Uniform => FilterMode::UniformCoding,
    };
    let opts = TrialOptions {
        adf: Some(mode),
        uniform: false,
        particles: None,
        keep_series: true,
    };
    let len = times.len();
    let (mut se, mut var, mut ratio) = (Moments::new(len), Moments::new(len), Moments::new(len));
    let (mut ok, mut failures) = (0, 0);
    for start in (0..cfg.trials).step_by(CHUNK) {
        let end = (start + CHUNK).min(cfg.trials);
        let chunk = map_trials(end - start, |i| run_trial(cfg, &cfg.encoder, start + i, &opts));
        for record in chunk {
            let Ok(record) = record else {
                failures += 1;
                continue;
            };
            ok += 1;
            let path = record.path.as_ref().expect("series kept");
            let beliefs = &record.adf.as_ref().expect("adf requested").beliefs;
            for k in 0..len {
                let e = squared_error(&beliefs[k], &path.states[k]);
                let v = beliefs[k].trace();
                se.add(k, e);
                var.add(k, v);
                ratio.add(k, e / v);
            }
        }
    }
    if ok == 0 {
        return Err(ExperimentError::Setup("every trial failed".to_string()));
    }
    let (mse, mse_se) = se.finish(ok);
    let (variance, variance_se) = var.finish(ok);
    let (mean_ratio, mean_ratio_se) = ratio.finish(ok);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, w) in window_weights(&times, cfg.window) {
        num += w * mse[k];
        den += w * variance[k];
    }
    Ok(VarianceMseReport {
        times,
        mse,
        mse_se,
        variance,
        variance_se,
        mean_ratio,
        mean_ratio_se,
        steady_ratio: num / den,
        trials_ok: ok,
        failures,
    })
}

/// Window averages of the ADF/particle-filter discrepancy on one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleTrial {
    pub trial: usize,
    pub spike_count: usize,
    /// mean of `‖μ_ADF − μ_PF‖`
    pub mean_gap: f64,
    /// mean of `|tr Σ_ADF − tr Σ_PF| / tr Σ_PF`
    pub rel_var_gap: f64,
    /// mean of `√tr Σ_PF`
    pub pf_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub trials: Vec<OracleTrial>,
    pub failures: usize,
    pub mean_gap: f64,
    pub rel_var_gap: f64,
    pub pf_std: f64,
}

impl OracleReport {
    /// Mean gap is under a tenth of the particle filter's posterior std.
    pub fn mean_agrees(&self) -> bool {
        self.mean_gap < 0.1 * self.pf_std
    }

    pub fn variance_agrees(&self) -> bool {
        self.rel_var_gap < 0.15
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["trial", "spikes", "mean_gap", "rel_var_gap", "pf_std"]);
        for r in &self.trials {
            t.push(vec![
                r.trial as f64,
                r.spike_count as f64,
                r.mean_gap,
                r.rel_var_gap,
                r.pf_std,
            ]);
        }
        t
    }
}

/// Runs the ADF and a particle filter with `cfg.particles` particles on the
/// same spikes and compares their moments over the window.
pub fn validate_oracle(cfg: &ExperimentConfig) -> Result<OracleReport, ExperimentError> {
    let times = time_grid(cfg.horizon, cfg.dt)?;
    let weights = window_weights(&times, cfg.window);
    let span: f64 = weights.iter().map(|(_, w)| w).sum();
    let opts = TrialOptions {
        adf: Some(FilterMode::Full),
        uniform: false,
        particles: Some(cfg.particles),
        keep_series: true,
    };
    let results = map_trials(cfg.trials, |t| {
        run_trial(cfg, &cfg.encoder, t, &opts).map(|r| {
            let adf = &r.adf.as_ref().expect("adf requested").beliefs;
            let pf = &r.pf.as_ref().expect("particles requested").beliefs;
            let (mut gap, mut rel, mut std) = (0.0, 0.0, 0.0);
            for &(k, w) in &weights {
                let pv = pf[k].trace();
                gap += w * (&adf[k].mean - &pf[k].mean).norm();
                rel += w * (adf[k].trace() - pv).abs() / pv;
                std += w * pv.sqrt();
            }
            OracleTrial {
                trial: t,
                spike_count: r.spike_count,
                mean_gap: gap / span,
                rel_var_gap: rel / span,
                pf_std: std / span,
            }
        })
    });
    let trials: Vec<OracleTrial> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    if trials.is_empty() {
        return Err(ExperimentError::Setup("every trial failed".to_string()));
    }
    let avg = |f: fn(&OracleTrial) -> f64| trials.iter().map(f).sum::<f64>() / trials.len() as f64;
    Ok(OracleReport {
        failures: results.len() - trials.len(),
        mean_gap: avg(|t| t.mean_gap),
        rel_var_gap: avg(|t| t.rel_var_gap),
        pf_std: avg(|t| t.pf_std),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(text).unwrap()
    }

    #[test]
    fn silent_encoder_gives_identical_errors() {
        let c = cfg("model.a = 0\nmodel.d = 0\nencoder.lambda0 = 0\nencoder.sigma_pop2 = 0.5\nencoder.sigma_tc2 = 0.1\nrun.trials = 8\nsweep.sigma_pop2 = [0.5, 100]\n");
        let rows = compare_uniform(&c).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.adf, r.uniform);
            assert_eq!(r.gap, 0.0);
            assert_eq!(r.paired_se, 0.0);
            assert_eq!(r.failures, 0);
        }
        assert_eq!(CompareRow::table(&rows).rows.len(), 2);
    }

    #[test]
    fn noiseless_silent_run_reports_prior_values() {
        // X_t = X_0 ~ N(0, 1) and the filter stays at the prior
        let c = cfg("model.a = 0\nmodel.d = 0\nencoder.lambda0 = 0\nrun.horizon = 1\nrun.window = [0.5, 1]\nrun.dt = 0.01\nrun.trials = 5\n");
        let r = variance_vs_mse(&c).unwrap();
        assert_eq!(r.trials_ok, 5);
        assert!(r.variance.iter().all(|&v| v == 1.0));
        assert!(r.variance_se.iter().all(|&v| v == 0.0));
        // squared error is X_0², constant in time
        assert!(r.mse.iter().all(|&m| (m - r.mse[0]).abs() < 1e-15));
        assert!((r.steady_ratio - r.mse[0]).abs() < 1e-12);
        assert_eq!(r.table().rows.len(), r.times.len());
    }

    #[test]
    fn small_oracle_run_agrees() {
        let c = cfg("model.a = -0.1\nmodel.d = 0.5\nmodel.init = steady\nencoder.sigma_pop2 = 0.5\nencoder.sigma_tc2 = 0.1\nencoder.lambda0 = 50\nrun.horizon = 2\nrun.window = [1, 2]\nrun.dt = 0.002\nrun.trials = 2\noracle.particles = 2000\n");
        let r = validate_oracle(&c).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert_eq!(r.failures, 0);
        assert!(r.pf_std > 0.0);
        assert!(r.mean_gap < 0.3 * r.pf_std, "{r:?}");
        assert!(r.rel_var_gap < 0.4, "{r:?}");
        assert_eq!(r.table().rows.len(), 2);
    }
}
