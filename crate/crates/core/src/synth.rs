//! Seeded random instance families used by the verification suites and tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PriorSpec, Problem, QuadraticObservation};

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `G Gᵀ / m + floor·I`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, m: usize, floor: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, m, m);
    let mut p = &g * g.transpose() / m as f64 + DMatrix::identity(m, m) * floor;
    p = (&p + p.transpose()) * 0.5;
    p
}

/// Which structure the random observations have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Dense symmetric `X_i` and nonzero `z_i` (full-rank atoms almost surely).
    Quadratic,
    /// `X_i = x_i x_iᵀ`, `z_i = 0` (phase-retrieval-like).
    Rank1,
    /// `X_i = 0`.
    Linear,
}

pub fn problem<R: Rng + ?Sized>(
    rng: &mut R,
    family: Family,
    m: usize,
    n: usize,
    sigma2: f64,
) -> Problem {
    match family {
        Family::Quadratic => quadratic_problem(rng, m, n, sigma2),
        Family::Rank1 => rank1_problem(rng, m, n, sigma2),
        Family::Linear => linear_problem(rng, m, n, sigma2),
    }
}

pub fn quadratic_problem<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, sigma2: f64) -> Problem {
    let prior = PriorSpec::centered_gaussian(random_spd(rng, m, 0.5)).expect("spd prior");
    let obs = (0..n)
        .map(|_| {
            let g = gaussian_matrix(rng, m, m);
            let x = (&g + g.transpose()) * 0.5;
            QuadraticObservation::new(x, gaussian_vector(rng, m), sigma2).expect("valid")
        })
        .collect();
    Problem::new(prior, obs).expect("valid problem")
}

pub fn rank1_problem<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, sigma2: f64) -> Problem {
    let prior = PriorSpec::centered_gaussian(random_spd(rng, m, 0.5)).expect("spd prior");
    let obs = (0..n)
        .map(|_| {
            QuadraticObservation::outer(gaussian_vector(rng, m), DVector::zeros(m), sigma2)
                .expect("valid")
        })
        .collect();
    Problem::new(prior, obs).expect("valid problem")
}

pub fn linear_problem<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, sigma2: f64) -> Problem {
    let prior = PriorSpec::centered_gaussian(random_spd(rng, m, 0.5)).expect("spd prior");
    let obs = (0..n)
        .map(|_| QuadraticObservation::linear(gaussian_vector(rng, m), sigma2).expect("valid"))
        .collect();
    Problem::new(prior, obs).expect("valid problem")
}

/// Noise standard deviations: one shared value, or each drawn uniformly from `points`
/// log-spaced values over `interval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Identical { sigma: f64 },
    LogUniform { interval: [f64; 2], points: usize },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Identical { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Config("noise.sigma must be positive".into()))
            }
            NoiseSpec::LogUniform { interval, points } => {
                if !(interval[0] > 0.0 && interval[1] >= interval[0]) || *points == 0 {
                    return Err(Error::Config(
                        "noise.interval must be positive and increasing with points >= 1".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        match self {
            NoiseSpec::Identical { sigma } => vec![*sigma],
            NoiseSpec::LogUniform { interval, points } => {
                let (lo, hi) = (interval[0].ln(), interval[1].ln());
                if *points == 1 {
                    return vec![interval[0]];
                }
                (0..*points)
                    .map(|i| (lo + (hi - lo) * i as f64 / (*points - 1) as f64).exp())
                    .collect()
            }
        }
    }

    /// Per-measurement variances `σ_i²`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<f64> {
        let levels = self.levels();
        (0..m)
            .map(|_| {
                let s = if levels.len() == 1 {
                    levels[0]
                } else {
                    levels[rng.random_range(0..levels.len())]
                };
                s * s
            })
            .collect()
    }
}
