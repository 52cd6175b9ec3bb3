//! With a uniform population the uniform coding filter is exact, so a large
//! particle filter must reproduce it.

use spikefilter::belief::GaussianBelief;
use spikefilter::dynamics::{simulate_path, StateModel};
use spikefilter::filter::{run_filter, FilterMode};
use spikefilter::oracle::run_particle_filter;
use spikefilter::spikes::{generate_spikes, EncoderParams};

#[test]
fn particle_filter_matches_exact_filter() {
    let model = StateModel::scalar(-0.5, 0.5, 0.0, 0.25).unwrap();
    let enc = EncoderParams::uniform_scalar(0.2, 2.0).unwrap();
    let path = simulate_path(&model, 5.0, 1e-3, 1).unwrap();
    let train = generate_spikes(&enc, &path, 2).unwrap();
    assert!(train.len() > 5, "{} spikes", train.len());

    let prior = GaussianBelief::scalar(0.0, 0.25);
    let exact = run_filter(&model, &enc, &train, &prior, 1e-3, &FilterMode::UniformCoding).unwrap();
    let pf = run_particle_filter(&model, &enc, &train, 100_000, 1e-3, 3).unwrap();
    assert_eq!(exact.times, pf.times);
    let gap = exact
        .beliefs
        .iter()
        .zip(&pf.beliefs)
        .map(|(e, p)| {
            (e.mean[0] - p.mean[0])
                .abs()
                .max((e.cov.get(0, 0) - p.cov.get(0, 0)).abs())
        })
        .fold(0.0, f64::max);
    assert!(gap < 0.02, "sup gap {gap}");
}
