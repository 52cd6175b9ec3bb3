//! Built-in configurations for the standard experiments.

const COMPARE_UNIFORM: &str = "\
# ADF against the uniform coding filter on a static state
model.a = 0
model.d = 0
model.mu0 = 0
model.sigma0 = 1
model.x0 = 0.5
encoder.c = 0
encoder.sigma_pop2 = 0.5
encoder.sigma_tc2 = 0.1
encoder.lambda0 = 10
run.horizon = 10
run.window = [5, 10]
run.trials = 1000
sweep.sigma_pop2 = [0.1, 0.5, 2, 10, 100, 10000]
";

const CENTER_RATE: &str = "\
# optimal population center against the base rate
model.a = -1
model.d = 0.5
model.init = steady
encoder.sigma_pop2 = 0.1
encoder.sigma_tc2 = 0.01
encoder.lambda0 = 50
run.horizon = 10
run.window = [5, 10]
run.trials = 1000
sweep.c = [0:1:0.05]
sweep.lambda0 = [10, 20, 50, 100, 200]
";

const CENTER_WIDTH: &str = "\
# optimal population center against the tuning width
model.a = -1
model.d = 0.5
model.init = steady
encoder.sigma_pop2 = 0.1
encoder.sigma_tc2 = 0.01
encoder.lambda0 = 50
run.horizon = 10
run.window = [5, 10]
run.trials = 1000
sweep.c = [0:1:0.05]
sweep.sigma_tc2 = [0.001, 0.01, 0.05, 0.1, 0.2]
";

const POPULATION_NARROW: &str = "\
# population center and spread for a narrow static prior
model.a = 0
model.d = 0
model.sigma0 = 0.1
encoder.sigma_tc2 = 1
encoder.lambda0 = 10
run.horizon = 10
run.window = [5, 10]
run.trials = 100
sweep.c = [0:2:0.1]
sweep.sigma_pop2 = [0.01, 0.03, 0.1, 0.3, 1, 3, 10]
";

const POPULATION_WIDE: &str = "\
# population center and spread for a wide static prior
model.a = 0
model.d = 0
model.sigma0 = 10
encoder.sigma_tc2 = 1
encoder.lambda0 = 10
run.horizon = 10
run.window = [5, 10]
run.trials = 100
sweep.c = [0:6:0.5]
sweep.sigma_pop2 = [0.1, 0.3, 1, 3, 10, 30, 100]
";

const VARIANCE_MSE: &str = "\
# posterior variance against squared error
model.a = -0.1
model.d = 0.5
model.init = steady
encoder.c = 0
encoder.sigma_pop2 = 0.1
encoder.sigma_tc2 = 0.01
encoder.lambda0 = 10
run.horizon = 10
run.window = [5, 10]
run.trials = 1000
";

const ORACLE: &str = "\
# ADF against a particle filter
model.a = -0.1
model.d = 0.5
model.init = steady
encoder.c = 0
encoder.sigma_pop2 = 0.5
encoder.sigma_tc2 = 0.1
encoder.lambda0 = 50
run.horizon = 10
run.window = [1, 10]
run.trials = 100
oracle.particles = 10000
";

/// Preset names and their configuration text.
pub const PRESETS: &[(&str, &str)] = &[
    ("compare-uniform", COMPARE_UNIFORM),
    ("center-rate", CENTER_RATE),
    ("center-width", CENTER_WIDTH),
    ("population-narrow", POPULATION_NARROW),
    ("population-wide", POPULATION_WIDE),
    ("variance-mse", VARIANCE_MSE),
    ("oracle", ORACLE),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn presets_parse() {
        for (name, text) in PRESETS {
            ExperimentConfig::from_text(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("oracle").is_some());
        assert!(preset("nope").is_none());
    }
}
