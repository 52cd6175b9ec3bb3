//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! model.a = -0.1
//! model.d = 0.5
//! encoder.sigma_tc2 = 0.01
//! sweep.c = [0.0:2.0:0.05]     # inclusive range
//! sweep.lambda0 = [10, 20, 50]
//! filter.mode = full
//! ```
//!
//! Matrices are given row-major as flat lists; a single number stands for a
//! scalar (or a scaled identity for covariances).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{Drift, StateModel};
use crate::linalg::SymMatrix;
use crate::spikes::{EncoderParams, Population};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("unknown key `{key}`")]
    Unknown { key: String },
    #[error("key `{key}`: expected {expected}")]
    Type { key: String, expected: &'static str },
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigValue {
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

/// Parsed but uninterpreted entries, keyed by dotted name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, ConfigValue>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "model.a",
    "model.d",
    "model.init",
    "model.mu0",
    "model.sigma0",
    "model.x0",
    "encoder.h",
    "encoder.c",
    "encoder.sigma_pop2",
    "encoder.sigma_tc2",
    "encoder.lambda0",
    "encoder.population",
    "run.horizon",
    "run.dt",
    "run.trials",
    "run.window",
    "run.seed",
    "sweep.c",
    "sweep.lambda0",
    "sweep.sigma_tc2",
    "sweep.sigma_pop2",
    "filter.mode",
    "oracle.particles",
];

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("bad key {key:?}"),
                });
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::Unknown { key: key.to_string() });
            }
            let value = parse_value(value.trim()).map_err(|message| ConfigError::Invalid {
                key: key.to_string(),
                message,
            })?;
            if entries.insert(key.to_string(), value).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
        }
        Ok(RawConfig { entries })
    }

    pub fn get(&self, key: &str) -> Option<&ConfigValue> {
        self.entries.get(key)
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(ConfigValue::Number(v)) => Ok(Some(*v)),
            Some(_) => Err(ConfigError::Type {
                key: key.to_string(),
                expected: "a number",
            }),
        }
    }

    /// A number is accepted as a one-element list.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(ConfigValue::Number(v)) => Ok(Some(vec![*v])),
            Some(ConfigValue::List(v)) => Ok(Some(v.clone())),
            Some(ConfigValue::Text(_)) => Err(ConfigError::Type {
                key: key.to_string(),
                expected: "a number or list",
            }),
        }
    }

    pub fn text(&self, key: &str) -> Result<Option<&str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(ConfigValue::Text(s)) => Ok(Some(s)),
            Some(_) => Err(ConfigError::Type {
                key: key.to_string(),
                expected: "a word",
            }),
        }
    }

    fn count(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.number(key)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(Some(v as u64)),
            Some(_) => Err(ConfigError::Type {
                key: key.to_string(),
                expected: "a non-negative integer",
            }),
        }
    }
}

fn parse_value(s: &str) -> Result<ConfigValue, String> {
    if let Some(inner) = s.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or("unterminated list")?.trim();
        if inner.contains(':') {
            return parse_range(inner).map(ConfigValue::List);
        }
        if inner.is_empty() {
            return Ok(ConfigValue::List(Vec::new()));
        }
        return inner
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number {:?}", v.trim()))
            })
            .collect::<Result<_, _>>()
            .map(ConfigValue::List);
    }
    if let Some(inner) = s.strip_prefix('"') {
        return inner
            .strip_suffix('"')
            .map(|t| ConfigValue::Text(t.to_string()))
            .ok_or_else(|| "unterminated string".to_string());
    }
    if s.is_empty() {
        return Err("missing value".to_string());
    }
    if let Ok(v) = s.parse::<f64>() {
        return Ok(ConfigValue::Number(v));
    }
    if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Ok(ConfigValue::Text(s.to_string()));
    }
    Err(format!("cannot parse {s:?}"))
}

/// `lo:hi:step`, inclusive of `hi` up to rounding.
fn parse_range(inner: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = inner
        .split(':')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number {:?}", v.trim()))
        })
        .collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err("range needs `lo:hi:step`".to_string());
    };
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(format!("empty or invalid range {lo}:{hi}:{step}"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err("range has too many points".to_string());
    }
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterChoice {
    Full,
    Uniform,
}

/// Candidate encoder values for sweeps. Empty axes fall back to the base
/// encoder's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepAxes {
    pub c: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub sigma_tc2: Vec<f64>,
    pub sigma_pop2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: StateModel,
    /// Fixed initial true state; when absent the path starts from a draw of
    /// the model's initial law.
    pub true_start: Option<DVector<f64>>,
    pub encoder: EncoderParams,
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    pub window: (f64, f64),
    pub seed: u64,
    pub sweep: SweepAxes,
    pub filter: FilterChoice,
    pub particles: usize,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let a = raw.list("model.a")?.unwrap_or_else(|| vec![0.0]);
        let n = square_side("model.a", a.len())?;
        let a = DMatrix::from_row_slice(n, n, &a);
        let d = matrix_or_scaled_identity(raw, "model.d", n, 0.0)?;
        let mu0 = vector_or_fill(raw, "model.mu0", n, 0.0)?;
        let sigma0 = SymMatrix::new(matrix_or_scaled_identity(raw, "model.sigma0", n, 1.0)?)
            .map_err(|e| invalid("model.sigma0", e))?;
        let mut model = StateModel::new(Drift::Linear(a), d, mu0, sigma0).map_err(|e| invalid("model", e))?;
        match raw.text("model.init")?.unwrap_or("given") {
            "given" => {}
            "steady" => model = model.at_steady_state().map_err(|e| invalid("model.init", e))?,
            other => {
                return Err(invalid(
                    "model.init",
                    format!("expected `given` or `steady`, found `{other}`"),
                ))
            }
        }
        let true_start = match raw.list("model.x0")? {
            None => None,
            Some(v) if v.len() == n => Some(DVector::from_vec(v)),
            Some(v) => return Err(invalid("model.x0", format!("expected {n} values, found {}", v.len()))),
        };

        let h = match raw.list("encoder.h")? {
            None => DMatrix::identity(n, n),
            Some(v) if v.len() % n == 0 && !v.is_empty() => DMatrix::from_row_slice(v.len() / n, n, &v),
            Some(v) => {
                return Err(invalid(
                    "encoder.h",
                    format!("{} values do not form rows of length {n}", v.len()),
                ))
            }
        };
        let m = h.nrows();
        let tuning = SymMatrix::new(matrix_or_scaled_identity(raw, "encoder.sigma_tc2", m, 1.0)?)
            .map_err(|e| invalid("encoder.sigma_tc2", e))?;
        let lambda0 = raw.number("encoder.lambda0")?.unwrap_or(10.0);
        let population = match raw.text("encoder.population")?.unwrap_or("gaussian") {
            "gaussian" => Population::Gaussian {
                center: vector_or_fill(raw, "encoder.c", m, 0.0)?,
                cov: SymMatrix::new(matrix_or_scaled_identity(raw, "encoder.sigma_pop2", m, 1.0)?)
                    .map_err(|e| invalid("encoder.sigma_pop2", e))?,
            },
            "uniform" => Population::Uniform,
            other => {
                return Err(invalid(
                    "encoder.population",
                    format!("expected `gaussian` or `uniform`, found `{other}`"),
                ))
            }
        };
        let encoder = EncoderParams::new(h, tuning, lambda0, population).map_err(|e| invalid("encoder", e))?;

        let horizon = raw.number("run.horizon")?.unwrap_or(10.0);
        let dt = raw.number("run.dt")?.unwrap_or(1e-3);
        if !(horizon > 0.0) {
            return Err(invalid("run.horizon", "must be positive"));
        }
        if !(dt > 0.0 && dt <= horizon) {
            return Err(invalid("run.dt", "must be positive and at most the horizon"));
        }
        let trials = raw.count("run.trials")?.unwrap_or(1000) as usize;
        if trials == 0 {
            return Err(invalid("run.trials", "must be at least 1"));
        }
        let window = match raw.list("run.window")? {
            None => (5.0f64.min(horizon), horizon.min(10.0)),
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(_) => return Err(invalid("run.window", "expected [t_lo, t_hi]")),
        };
        if !(window.0 < window.1 && window.1 <= horizon && window.0 >= 0.0) {
            return Err(invalid("run.window", "need 0 ≤ t_lo < t_hi ≤ horizon"));
        }
        let seed = raw.count("run.seed")?.unwrap_or(0);
        let sweep = SweepAxes {
            c: raw.list("sweep.c")?.unwrap_or_default(),
            lambda0: raw.list("sweep.lambda0")?.unwrap_or_default(),
            sigma_tc2: raw.list("sweep.sigma_tc2")?.unwrap_or_default(),
            sigma_pop2: raw.list("sweep.sigma_pop2")?.unwrap_or_default(),
        };
        for (key, values, positive) in [
            ("sweep.lambda0", &sweep.lambda0, false),
            ("sweep.sigma_tc2", &sweep.sigma_tc2, true),
            ("sweep.sigma_pop2", &sweep.sigma_pop2, true),
        ] {
            if values
                .iter()
                .any(|&v| !(v > 0.0 || (!positive && v == 0.0)) || !v.is_finite())
            {
                return Err(invalid(key, "values must be finite and positive"));
            }
        }
        let filter = match raw.text("filter.mode")?.unwrap_or("full") {
            "full" => FilterChoice::Full,
            "uniform" => FilterChoice::Uniform,
            other => {
                return Err(invalid(
                    "filter.mode",
                    format!("expected `full` or `uniform`, found `{other}`"),
                ))
            }
        };
        let particles = raw.count("oracle.particles")?.unwrap_or(10_000) as usize;
        if particles == 0 {
            return Err(invalid("oracle.particles", "must be at least 1"));
        }
        Ok(ExperimentConfig {
            model,
            true_start,
            encoder,
            horizon,
            dt,
            trials,
            window,
            seed,
            sweep,
            filter,
            particles,
        })
    }
}

fn square_side(key: &str, len: usize) -> Result<usize, ConfigError> {
    let n = (len as f64).sqrt().round() as usize;
    if n == 0 || n * n != len {
        return Err(invalid(key, format!("{len} values do not form a square matrix")));
    }
    Ok(n)
}

fn matrix_or_scaled_identity(raw: &RawConfig, key: &str, n: usize, default: f64) -> Result<DMatrix<f64>, ConfigError> {
    match raw.list(key)? {
        None => Ok(DMatrix::identity(n, n) * default),
        Some(v) if v.len() == 1 => Ok(DMatrix::identity(n, n) * v[0]),
        Some(v) if v.len() == n * n => Ok(DMatrix::from_row_slice(n, n, &v)),
        Some(v) => Err(invalid(
            key,
            format!("expected 1 or {} values, found {}", n * n, v.len()),
        )),
    }
}

fn vector_or_fill(raw: &RawConfig, key: &str, n: usize, default: f64) -> Result<DVector<f64>, ConfigError> {
    match raw.list(key)? {
        None => Ok(DVector::from_element(n, default)),
        Some(v) if v.len() == 1 => Ok(DVector::from_element(n, v[0])),
        Some(v) if v.len() == n => Ok(DVector::from_vec(v)),
        Some(v) => Err(invalid(key, format!("expected 1 or {n} values, found {}", v.len()))),
    }
}
