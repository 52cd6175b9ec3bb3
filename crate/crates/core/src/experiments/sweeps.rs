//! Encoder grid searches.

use nalgebra::DVector;

use super::{adjust_encoder, map_trials, run_trial, EncoderKnob, ExperimentError, TrialOptions, WindowStats};
use crate::belief::GaussianBelief;
use crate::config::ExperimentConfig;
use crate::dynamics::steady_state_prior;
use crate::filter::{between_spike_derivative, FilterMode};
use crate::io::Table;
use crate::spikes::EncoderParams;
use crate::stats::Estimate;

/// Aggregate over the successful trials of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub axis: f64,
    pub c: f64,
    /// `√⟨Σ⟩ / σ_ref`
    pub std_ratio: f64,
    pub std_ratio_se: f64,
    /// `√⟨SE⟩ / σ_ref`
    pub rmse_ratio: f64,
    pub rmse_ratio_se: f64,
    pub mean_spikes: f64,
    pub trials_ok: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub c: Vec<f64>,
    /// row-major over `axis × c`
    pub cells: Vec<SweepCell>,
    /// reference standard deviation the ratios are normalized by
    pub reference_std: f64,
    /// c minimizing the posterior std in each row
    pub optimal_c: Vec<f64>,
    /// c maximizing the variance reduction at μ = 0 in each row; empty for
    /// population sweeps
    pub c_m: Vec<f64>,
}

impl SweepResult {
    pub fn cell(&self, row: usize, col: usize) -> &SweepCell {
        &self.cells[row * self.c.len() + col]
    }

    pub fn row(&self, row: usize) -> &[SweepCell] {
        &self.cells[row * self.c.len()..(row + 1) * self.c.len()]
    }

    /// Cell with the smallest finite std ratio.
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.std_ratio.is_finite())
            .min_by(|a, b| a.std_ratio.total_cmp(&b.std_ratio))
    }

    pub fn cells_table(&self) -> Table {
        let mut t = Table::new([
            self.axis_name.as_str(),
            "c",
            "std_ratio",
            "std_ratio_se",
            "rmse_ratio",
            "rmse_ratio_se",
            "mean_spikes",
            "trials_ok",
            "failures",
        ]);
        for c in &self.cells {
            t.push(vec![
                c.axis,
                c.c,
                c.std_ratio,
                c.std_ratio_se,
                c.rmse_ratio,
                c.rmse_ratio_se,
                c.mean_spikes,
                c.trials_ok as f64,
                c.failures as f64,
            ]);
        }
        t
    }

    pub fn rows_table(&self) -> Table {
        let mut t = Table::new([self.axis_name.as_str(), "c_opt", "c_m"]);
        for (i, &a) in self.axis.iter().enumerate() {
            t.push(vec![a, self.optimal_c[i], self.c_m.get(i).copied().unwrap_or(f64::NAN)]);
        }
        t
    }
}

fn summarize(
    axis: f64,
    c: f64,
    results: &[Result<(WindowStats, usize), ExperimentError>],
    reference_std: f64,
) -> SweepCell {
    let ok: Vec<&(WindowStats, usize)> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let var = Estimate::of(&ok.iter().map(|(s, _)| s.mean_variance).collect::<Vec<_>>());
    let se = Estimate::of(&ok.iter().map(|(s, _)| s.mean_se).collect::<Vec<_>>());
    let spikes: Vec<f64> = ok.iter().map(|(_, n)| *n as f64).collect();
    // delta method: se(√v) = se(v) / (2√v)
    let std = var.mean.sqrt();
    let rmse = se.mean.sqrt();
    SweepCell {
        axis,
        c,
        std_ratio: std / reference_std,
        std_ratio_se: var.se / (2.0 * std) / reference_std,
        rmse_ratio: rmse / reference_std,
        rmse_ratio_se: se.se / (2.0 * rmse) / reference_std,
        mean_spikes: crate::stats::mean(&spikes),
        trials_ok: ok.len(),
        failures: results.len() - ok.len(),
    }
}

/// Runs every `(axis, c)` cell with the ADF and summarizes it.
fn run_grid(
    cfg: &ExperimentConfig,
    axis: &[f64],
    cs: &[f64],
    encoder_for: impl Fn(f64, f64) -> Result<EncoderParams, ExperimentError> + Sync,
    reference_std: f64,
) -> Result<Vec<SweepCell>, ExperimentError> {
    let mut encoders = Vec::with_capacity(axis.len() * cs.len());
    for &a in axis {
        for &c in cs {
            encoders.push((a, c, encoder_for(a, c)?));
        }
    }
    let opts = TrialOptions::adf_only();
    let trials = cfg.trials;
    let flat = map_trials(encoders.len() * trials, |k| {
        let (_, _, enc) = &encoders[k / trials];
        run_trial(cfg, enc, k % trials, &opts).map(|r| (r.adf.expect("adf requested").stats, r.spike_count))
    });
    Ok(encoders
        .iter()
        .enumerate()
        .map(|(i, (a, c, _))| summarize(*a, *c, &flat[i * trials..(i + 1) * trials], reference_std))
        .collect())
}

fn row_argmin(cells: &[SweepCell]) -> f64 {
    cells
        .iter()
        .filter(|c| c.std_ratio.is_finite())
        .min_by(|a, b| a.std_ratio.total_cmp(&b.std_ratio))
        .map_or(f64::NAN, |c| c.c)
}

/// `argmin_c dσ²/dt` at `μ = 0` with the given posterior variance, found by
/// scanning `c` on a fine grid over `[0, c_max]`.
pub fn center_of_max_reduction(
    cfg: &ExperimentConfig,
    enc: &EncoderParams,
    posterior_var: f64,
    c_max: f64,
) -> Result<f64, ExperimentError> {
    let n = cfg.model.dim();
    let belief = GaussianBelief::new(
        DVector::zeros(n),
        crate::linalg::SymMatrix::scaled_identity(n, posterior_var),
    );
    let steps = 4000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=steps {
        let c = c_max * k as f64 / steps as f64;
        let e = adjust_encoder(enc, &[EncoderKnob::Center(c)])?;
        let (_, dsig) = between_spike_derivative(&belief, &cfg.model, &e, &FilterMode::Full, 0.0)?;
        let rate = dsig.as_matrix().trace();
        if rate < best.0 {
            best = (rate, c);
        }
    }
    Ok(best.1)
}

/// Grid over the population center and either the base rate (when
/// `sweep.lambda0` is set) or the tuning variance (`sweep.sigma_tc2`).
/// Ratios are relative to the prior steady-state standard deviation.
pub fn sweep_center(cfg: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    let prior = steady_state_prior(&cfg.model)?;
    let reference_std = prior.trace().sqrt();
    let (axis_name, axis, knob): (&str, Vec<f64>, fn(f64) -> EncoderKnob) = if !cfg.sweep.lambda0.is_empty() {
        ("lambda0", cfg.sweep.lambda0.clone(), EncoderKnob::Rate)
    } else if !cfg.sweep.sigma_tc2.is_empty() {
        ("sigma_tc2", cfg.sweep.sigma_tc2.clone(), EncoderKnob::TuningVar)
    } else {
        ("lambda0", vec![cfg.encoder.rate_scale], EncoderKnob::Rate)
    };
    let cs = nonempty_c(cfg)?;
    let cells = run_grid(
        cfg,
        &axis,
        &cs,
        |a, c| Ok(adjust_encoder(&cfg.encoder, &[knob(a), EncoderKnob::Center(c)])?),
        reference_std,
    )?;
    let mut optimal_c = Vec::new();
    let mut c_m = Vec::new();
    let c_span = cs.iter().cloned().fold(0.0, f64::max).max(1e-3);
    for (i, &a) in axis.iter().enumerate() {
        let row = &cells[i * cs.len()..(i + 1) * cs.len()];
        optimal_c.push(row_argmin(row));
        // steady-state posterior variance of the row: its best cell
        let best_var = row
            .iter()
            .filter(|c| c.std_ratio.is_finite())
            .map(|c| (c.std_ratio * reference_std).powi(2))
            .fold(f64::INFINITY, f64::min);
        if best_var.is_finite() {
            let enc = adjust_encoder(&cfg.encoder, &[knob(a)])?;
            c_m.push(center_of_max_reduction(cfg, &enc, best_var, 4.0 * c_span)?);
        } else {
            c_m.push(f64::NAN);
        }
    }
    Ok(SweepResult {
        axis_name: axis_name.to_string(),
        axis,
        c: cs,
        cells,
        reference_std,
        optimal_c,
        c_m,
    })
}

/// Grid over the population center and population variance for a static
/// state; ratios are relative to the prior standard deviation.
pub fn sweep_population(cfg: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    let reference_std = cfg.model.initial_cov.as_matrix().trace().sqrt();
    let axis = if cfg.sweep.sigma_pop2.is_empty() {
        let (_, cov) = cfg.encoder.gaussian_population()?;
        vec![cov.get(0, 0)]
    } else {
        cfg.sweep.sigma_pop2.clone()
    };
    let cs = nonempty_c(cfg)?;
    let cells = run_grid(
        cfg,
        &axis,
        &cs,
        |a, c| {
            Ok(adjust_encoder(
                &cfg.encoder,
                &[EncoderKnob::PopulationVar(a), EncoderKnob::Center(c)],
            )?)
        },
        reference_std,
    )?;
    let optimal_c = (0..axis.len())
        .map(|i| row_argmin(&cells[i * cs.len()..(i + 1) * cs.len()]))
        .collect();
    Ok(SweepResult {
        axis_name: "sigma_pop2".to_string(),
        axis,
        c: cs,
        cells,
        reference_std,
        optimal_c,
        c_m: Vec::new(),
    })
}

fn nonempty_c(cfg: &ExperimentConfig) -> Result<Vec<f64>, ExperimentError> {
    if !cfg.sweep.c.is_empty() {
        return Ok(cfg.sweep.c.clone());
    }
    let (center, _) = cfg.encoder.gaussian_population()?;
    Ok(vec![center[0]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_reduction_center_matches_closed_form() {
        // minimizing e^{-c²/2S}(1 − c²/S) gives c = √(3S)
        let cfg = ExperimentConfig::from_text(
            "model.a = -1\nmodel.d = 0.5\nencoder.sigma_pop2 = 0.1\nencoder.sigma_tc2 = 0.01\nencoder.lambda0 = 50\n",
        )
        .unwrap();
        let var = 0.05;
        let c = center_of_max_reduction(&cfg, &cfg.encoder, var, 2.0).unwrap();
        let exact = (3.0f64 * (var + 0.01 + 0.1)).sqrt();
        assert!((c - exact).abs() <= 2.0 / 4000.0 + 1e-12, "{c} vs {exact}");
    }

    #[test]
    fn small_center_sweep_shape() {
        let cfg = ExperimentConfig::from_text(
            "model.a = -1\nmodel.d = 0.5\nmodel.init = steady\nencoder.sigma_pop2 = 0.1\nencoder.sigma_tc2 = 0.01\nencoder.lambda0 = 50\nrun.horizon = 2\nrun.window = [1, 2]\nrun.trials = 4\nsweep.c = [0, 0.5]\nsweep.lambda0 = [20, 50, 80]\n",
        )
        .unwrap();
        let r = sweep_center(&cfg).unwrap();
        assert_eq!(r.cells.len(), 6);
        assert_eq!(r.cell(1, 1).axis, 50.0);
        assert_eq!(r.cell(1, 1).c, 0.5);
        assert_eq!(r.row(2).len(), 2);
        assert_eq!(r.optimal_c.len(), 3);
        assert_eq!(r.c_m.len(), 3);
        assert!((r.reference_std - 0.125f64.sqrt()).abs() < 1e-12);
        assert!(r
            .cells
            .iter()
            .all(|c| c.trials_ok == 4 && c.failures == 0 && c.std_ratio > 0.0));
        assert_eq!(r.cells_table().rows.len(), 6);
        assert_eq!(r.rows_table().rows.len(), 3);
    }

    #[test]
    fn failed_trials_are_excluded() {
        let ok = Ok((
            WindowStats {
                integrated_se: 1.0,
                mean_se: 0.2,
                mean_variance: 0.25,
            },
            3,
        ));
        let bad = Err(ExperimentError::Setup("x".into()));
        let cell = summarize(1.0, 0.0, &[ok.clone(), bad, ok], 1.0);
        assert_eq!(cell.trials_ok, 2);
        assert_eq!(cell.failures, 1);
        assert_eq!(cell.std_ratio, 0.5);
        assert_eq!(cell.std_ratio_se, 0.0);
        assert_eq!(cell.mean_spikes, 3.0);
    }
}
