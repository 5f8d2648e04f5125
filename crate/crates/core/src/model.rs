//! Quadratic observation model `y_i = ½ θᵀ X_i θ + z_iᵀ θ + ν_i`, priors, centering and
//! the JSON problem file.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default cap on the parameter dimension `m`.
pub const DEFAULT_MAX_DIMENSION: usize = 512;

/// One measurement channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObservation {
    /// Quadratic coefficient `X`, stored as given (not symmetrized).
    pub x: DMatrix<f64>,
    /// Set when the caller built `X = x xᵀ` explicitly; enables low-rank fast paths.
    pub x_factor: Option<DVector<f64>>,
    pub z: DVector<f64>,
    pub sigma2: f64,
}

impl QuadraticObservation {
    pub fn new(x: DMatrix<f64>, z: DVector<f64>, sigma2: f64) -> Result<Self> {
        let obs = Self {
            x,
            x_factor: None,
            z,
            sigma2,
        };
        obs.validate(obs.z.len())?;
        Ok(obs)
    }

    /// Observation with `X = x xᵀ`.
    pub fn outer(x: DVector<f64>, z: DVector<f64>, sigma2: f64) -> Result<Self> {
        let obs = Self {
            x: linalg::outer(&x),
            x_factor: Some(x),
            z,
            sigma2,
        };
        obs.validate(obs.z.len())?;
        Ok(obs)
    }

    /// Linear observation `y = zᵀθ + ν` (`X = 0`).
    pub fn linear(z: DVector<f64>, sigma2: f64) -> Result<Self> {
        let m = z.len();
        Self::new(DMatrix::zeros(m, m), z, sigma2)
    }

    pub fn dimension(&self) -> usize {
        self.z.len()
    }

    /// True when `X` is exactly zero.
    pub fn is_linear(&self) -> bool {
        self.x.iter().all(|v| *v == 0.0)
    }

    /// Noise-free model value `½ θᵀXθ + zᵀθ`.
    pub fn mean_value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.x * theta)) + self.z.dot(theta)
    }

    /// `∇_θ (½ θᵀXθ + zᵀθ) = ½(X + Xᵀ)θ + z`.
    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        (&self.x * theta + self.x.transpose() * theta) * 0.5 + &self.z
    }

    fn validate(&self, m: usize) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Invalid(format!(
                "sigma2 must be positive (got {})",
                self.sigma2
            )));
        }
        if self.z.len() != m || self.x.nrows() != m || self.x.ncols() != m {
            return Err(Error::Dimension(format!(
                "observation has X {}x{}, z {} but problem dimension is {m}",
                self.x.nrows(),
                self.x.ncols(),
                self.z.len()
            )));
        }
        if let Some(f) = &self.x_factor {
            if f.len() != m {
                return Err(Error::Dimension(format!(
                    "outer-product factor has length {} but problem dimension is {m}",
                    f.len()
                )));
            }
        }
        if self.x.iter().chain(self.z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("observation has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Prior on θ: covariance `P`, prior Fisher information `I_x` and mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub covariance: DMatrix<f64>,
    pub fisher: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// True when built by [`PriorSpec::gaussian`] (fisher = P⁻¹, θ ~ N(mean, P)).
    pub gaussian: bool,
}

impl PriorSpec {
    /// Gaussian prior `N(mean, P)`; `I_x = P⁻¹` via Cholesky.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&covariance, "prior covariance")?;
        let chol = nalgebra::Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Invalid("prior covariance not positive definite".into()))?;
        let fisher = linalg::hermitian_part(&chol.inverse());
        let prior = Self {
            covariance,
            fisher,
            mean,
            gaussian: true,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Zero-mean Gaussian prior.
    pub fn centered_gaussian(covariance: DMatrix<f64>) -> Result<Self> {
        let m = covariance.nrows();
        Self::gaussian(DVector::zeros(m), covariance)
    }

    /// Non-Gaussian prior with explicitly supplied Fisher information.
    pub fn with_fisher(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        fisher: DMatrix<f64>,
    ) -> Result<Self> {
        let prior = Self {
            covariance,
            fisher,
            mean,
            gaussian: false,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.mean.len();
        for (name, mat) in [("prior covariance", &self.covariance), ("prior fisher", &self.fisher)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{} but mean has length {m}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("prior mean has non-finite entries".into()));
        }
        check_symmetric(&self.covariance, "prior covariance")?;
        check_symmetric(&self.fisher, "prior fisher information")?;
        if nalgebra::Cholesky::new(self.covariance.clone()).is_none() {
            return Err(Error::Invalid("prior covariance not positive definite".into()));
        }
        if nalgebra::Cholesky::new(self.fisher.clone()).is_none() {
            return Err(Error::Invalid(
                "prior fisher information not positive definite".into(),
            ));
        }
        Ok(())
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("{what} has non-finite entries")));
    }
    if !m.is_square() {
        return Err(Error::Dimension(format!("{what} is not square")));
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * m.norm() {
        return Err(Error::Invalid(format!("{what} not symmetric")));
    }
    Ok(())
}

/// Ground set of observations together with the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub prior: PriorSpec,
    pub observations: Vec<QuadraticObservation>,
}

impl Problem {
    pub fn new(prior: PriorSpec, observations: Vec<QuadraticObservation>) -> Result<Self> {
        Self::with_max_dimension(prior, observations, DEFAULT_MAX_DIMENSION)
    }

    pub fn with_max_dimension(
        prior: PriorSpec,
        observations: Vec<QuadraticObservation>,
        max_dimension: usize,
    ) -> Result<Self> {
        let m = prior.dimension();
        if m == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if m > max_dimension {
            return Err(Error::Invalid(format!(
                "dimension {m} exceeds configured cap {max_dimension}"
            )));
        }
        if observations.is_empty() {
            return Err(Error::Invalid("problem needs at least one observation".into()));
        }
        for (i, obs) in observations.iter().enumerate() {
            obs.validate(m).map_err(|e| match e {
                Error::Invalid(msg) => Error::Invalid(format!("observation {i}: {msg}")),
                Error::Dimension(msg) => Error::Dimension(format!("observation {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self {
            prior,
            observations,
        })
    }

    pub fn dimension(&self) -> usize {
        self.prior.dimension()
    }

    /// Ground-set size `n`.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn is_centered(&self) -> bool {
        self.prior.mean.iter().all(|v| *v == 0.0)
    }
}

/// Re-expresses the model in `θ̃ = θ − μ`: `z̃_i = ½(X_iμ + X_iᵀμ + 2z_i)` and
/// `ỹ_i = y_i − ½ μᵀX_iμ − z_iᵀμ`. `X_i`, `σ_i²` and `P` are unchanged.
pub fn center_problem(
    problem: &Problem,
    measurements: Option<&DVector<f64>>,
) -> Result<(Problem, Option<DVector<f64>>)> {
    let mu = &problem.prior.mean;
    if let Some(y) = measurements {
        if y.len() != problem.len() {
            return Err(Error::Dimension(format!(
                "{} measurements for {} observations",
                y.len(),
                problem.len()
            )));
        }
    }
    if problem.is_centered() {
        return Ok((problem.clone(), measurements.cloned()));
    }
    let observations = problem
        .observations
        .iter()
        .map(|obs| {
            let xm = &obs.x * mu;
            let xtm = obs.x.transpose() * mu;
            let z = (xm + xtm + &obs.z * 2.0) * 0.5;
            QuadraticObservation {
                x: obs.x.clone(),
                x_factor: obs.x_factor.clone(),
                z,
                sigma2: obs.sigma2,
            }
        })
        .collect::<Vec<_>>();
    let shifted = measurements.map(|y| {
        DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(&problem.observations)
                .map(|(yi, obs)| yi - 0.5 * mu.dot(&(&obs.x * mu)) - obs.z.dot(mu)),
        )
    });
    let mut prior = problem.prior.clone();
    prior.mean = DVector::zeros(mu.len());
    Ok((
        Problem {
            prior,
            observations,
        },
        shifted,
    ))
}

/// Draws `y_i = ½ θᵀX_iθ + z_iᵀθ + ν_i`, `ν_i ~ N(0, σ_i²)` from a seeded stream.
pub fn simulate_measurements(
    problem: &Problem,
    theta: &DVector<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(problem, theta, &mut rng)
}

pub fn simulate_with_rng<R: rand::Rng + ?Sized>(
    problem: &Problem,
    theta: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if theta.len() != problem.dimension() {
        return Err(Error::Dimension(format!(
            "theta has length {} but problem dimension is {}",
            theta.len(),
            problem.dimension()
        )));
    }
    Ok(DVector::from_iterator(
        problem.len(),
        problem.observations.iter().map(|obs| {
            let noise: f64 = StandardNormal.sample(rng);
            obs.mean_value(theta) + obs.sigma2.sqrt() * noise
        }),
    ))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    dimension: usize,
    prior: PriorFile,
    observations: Vec<ObservationFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    mean: Vec<f64>,
    #[serde(rename = "P")]
    covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fisher: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationFile {
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    x_matrix: Option<Vec<Vec<f64>>>,
    /// Alternative to `X`: the vector `x` of an outer product `X = x xᵀ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    z: Vec<f64>,
    sigma2: f64,
}

fn rows_to_matrix(rows: &[Vec<f64>], m: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension(format!("{field} must be {m}x{m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn vector_of(v: &[f64], m: usize, field: &str) -> Result<DVector<f64>> {
    if v.len() != m {
        return Err(Error::Dimension(format!(
            "{field} has length {} but dimension is {m}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

/// Parses a problem from JSON text.
pub fn parse_problem(text: &str) -> Result<Problem> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let m = file.dimension;
    let mean = vector_of(&file.prior.mean, m, "prior.mean")?;
    let covariance = rows_to_matrix(&file.prior.covariance, m, "prior.P")?;
    let prior = match &file.prior.fisher {
        Some(f) => PriorSpec::with_fisher(mean, covariance, rows_to_matrix(f, m, "prior.fisher")?)?,
        None => PriorSpec::gaussian(mean, covariance)?,
    };
    let observations = file
        .observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let field = format!("observations[{i}]");
            let z = vector_of(&o.z, m, &format!("{field}.z"))?;
            let obs = match (&o.x_matrix, &o.x) {
                (Some(rows), None) => QuadraticObservation {
                    x: rows_to_matrix(rows, m, &format!("{field}.X"))?,
                    x_factor: None,
                    z,
                    sigma2: o.sigma2,
                },
                (None, Some(v)) => {
                    let x = vector_of(v, m, &format!("{field}.x"))?;
                    QuadraticObservation {
                        x: linalg::outer(&x),
                        x_factor: Some(x),
                        z,
                        sigma2: o.sigma2,
                    }
                }
                (None, None) => {
                    return Err(Error::Parse {
                        path: field,
                        message: "missing field `X` (or `x`)".into(),
                    })
                }
                (Some(_), Some(_)) => {
                    return Err(Error::Parse {
                        path: field,
                        message: "give either `X` or `x`, not both".into(),
                    })
                }
            };
            Ok(obs)
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::new(prior, observations)
}

pub fn problem_to_json(problem: &Problem) -> String {
    let file = ProblemFile {
        dimension: problem.dimension(),
        prior: PriorFile {
            mean: problem.prior.mean.iter().copied().collect(),
            covariance: matrix_to_rows(&problem.prior.covariance),
            fisher: (!problem.prior.gaussian).then(|| matrix_to_rows(&problem.prior.fisher)),
        },
        observations: problem
            .observations
            .iter()
            .map(|o| ObservationFile {
                x_matrix: o.x_factor.is_none().then(|| matrix_to_rows(&o.x)),
                x: o.x_factor.as_ref().map(|f| f.iter().copied().collect()),
                z: o.z.iter().copied().collect(),
                sigma2: o.sigma2,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("problem serializes")
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_problem(&text)
}

pub fn save_problem(problem: &Problem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), problem_to_json(problem)).map_err(|e| Error::io(&path, e))
}
