//! Config loading and the command-specific payloads that are not owned by the library.
use std::fs;
use std::path::{Path, PathBuf};

use quadsel::model::{load_problem, Problem};
use quadsel::select::{SelectionMethod, DEFAULT_EXHAUSTIVE_CAP};
use quadsel::synth::{self, Family};
use quadsel::{Criterion, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads and validates a JSON config; a missing path yields the defaults. A run manifest
/// is accepted too, in which case its recorded config is used.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("command") && obj.contains_key("config") {
            value = obj.remove("config").unwrap_or_default();
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| Error::Parse {
        path: format!("{}: {}", path.display(), e.path()),
        message: e.into_inner().to_string(),
    })
}

/// Relative paths inside a config are taken relative to the config file.
pub fn resolve_path(config: Option<&Path>, p: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub problem: Option<PathBuf>,
    pub k: usize,
    pub criterion: Criterion,
    pub method: SelectionMethod,
    pub exhaustive_cap: f64,
    /// Linearization point for `linearized`; defaults to the prior mean.
    pub theta0: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            problem: None,
            k: 1,
            criterion: Criterion::A,
            method: SelectionMethod::LazyGreedy,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
            theta0: None,
            seed: 0,
        }
    }
}

/// Where verification instances come from: a problem file, or seeded synthetic draws.
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub problem: Option<PathBuf>,
    pub family: Family,
    pub m: usize,
    pub n: usize,
    pub sigma2: f64,
    pub instances: usize,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.problem.is_none() {
            if self.m == 0 || self.n == 0 || self.instances == 0 {
                return Err(Error::Config("m, n and instances must be positive".into()));
            }
            if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
                return Err(Error::Config("sigma2 must be positive and finite".into()));
            }
        }
        Ok(())
    }

    /// Instance `i` is drawn from stream `i` of a generator seeded with `seed`.
    pub fn problems(&self, config: Option<&Path>, seed: u64) -> Result<Vec<Problem>> {
        self.validate()?;
        if let Some(p) = &self.problem {
            return Ok(vec![load_problem(resolve_path(config, p))?]);
        }
        Ok((0..self.instances)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                synth::problem(&mut rng, self.family, self.m, self.n, self.sigma2)
            })
            .collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub problem: Option<PathBuf>,
    pub family: Family,
    pub m: usize,
    pub n: usize,
    pub sigma2: f64,
    pub instances: usize,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
    /// Subset used by the `bound` suite; defaults to the first `min(n, 4)` observations.
    pub subset: Option<Vec<usize>>,
    pub samples: usize,
    pub tolerance: f64,
    pub trials: usize,
    pub k: usize,
    pub n_cap: usize,
}

impl VerifyConfig {
    pub fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            problem: self.problem.clone(),
            family: self.family,
            m: self.m,
            n: self.n,
            sigma2: self.sigma2,
            instances: self.instances,
        }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            problem: None,
            family: Family::Quadratic,
            m: 2,
            n: 6,
            sigma2: 1.0,
            instances: 1,
            seed: 0,
            criteria: Criterion::ALL.to_vec(),
            subset: None,
            samples: 100_000,
            tolerance: 0.05,
            trials: 1000,
            k: 3,
            n_cap: 12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WscConfig {
    pub problem: Option<PathBuf>,
    pub family: Family,
    pub m: usize,
    pub n: usize,
    pub sigma2: f64,
    pub instances: usize,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
    /// Factors applied to every observation's SNR (noise variance divided by each).
    pub snr: Vec<f64>,
    pub n_cap: usize,
}

impl Default for WscConfig {
    fn default() -> Self {
        Self {
            problem: None,
            family: Family::Rank1,
            m: 4,
            n: 8,
            sigma2: 1.0,
            instances: 20,
            seed: 0,
            criteria: vec![Criterion::A, Criterion::E],
            snr: (0..7).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect(),
            n_cap: 10,
        }
    }
}

impl WscConfig {
    pub fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            problem: self.problem.clone(),
            family: self.family,
            m: self.m,
            n: self.n,
            sigma2: self.sigma2,
            instances: self.instances,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr.is_empty() || self.snr.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("snr factors must be positive and finite".into()));
        }
        if self.criteria.is_empty() {
            return Err(Error::Config("criteria must not be empty".into()));
        }
        Ok(())
    }
}
