//! Phase retrieval from intensity measurements `y_i = ½|a_i^* θ|² + ν_i`: measurement
//! ensembles, the noise-adjusted Hermitian bound, Wirtinger flow and the NRMSE experiment.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{Design, InfoAtom};
use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::linalg;
use crate::select;
use crate::stats;

pub use crate::select::Scheme;
pub use crate::synth::NoiseSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    ComplexGaussian,
    DftRows,
}

/// Measurement vectors `a_i` with their noise variances.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMeasurementSet {
    pub vectors: Vec<DVector<Complex64>>,
    pub sigma2: Vec<f64>,
    pub ensemble: Ensemble,
}

impl ComplexMeasurementSet {
    /// Real and imaginary parts i.i.d. standard normal.
    pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma2: Vec<f64>) -> Self {
        let vectors = (0..sigma2.len())
            .map(|_| {
                DVector::from_fn(n, |_, _| {
                    Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
                })
            })
            .collect();
        Self {
            vectors,
            sigma2,
            ensemble: Ensemble::ComplexGaussian,
        }
    }

    /// Row `i` of the `m×m` DFT matrix `exp(−2πι·ik/m)` restricted to its first `n` columns;
    /// `normalize` scales by `1/√m`.
    pub fn dft_rows(n: usize, sigma2: Vec<f64>, normalize: bool) -> Self {
        let m = sigma2.len();
        let scale = if normalize { 1.0 / (m as f64).sqrt() } else { 1.0 };
        let vectors = (0..m)
            .map(|i| {
                DVector::from_fn(n, |k, _| {
                    let phase = -2.0 * PI * ((i * k) % m) as f64 / m as f64;
                    Complex64::from_polar(scale, phase)
                })
            })
            .collect();
        Self {
            vectors,
            sigma2,
            ensemble: Ensemble::DftRows,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, |a| a.len())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            sigma2: indices.iter().map(|&i| self.sigma2[i]).collect(),
            ensemble: self.ensemble,
        }
    }

    /// `½|a_i^* θ|² + ν_i`.
    pub fn simulate<R: Rng + ?Sized>(&self, theta: &DVector<Complex64>, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.vectors.iter().zip(&self.sigma2).map(|(a, s2)| {
                let noise: f64 = StandardNormal.sample(rng);
                0.5 * a.dotc(theta).norm_sqr() + s2.sqrt() * noise
            }),
        )
    }
}

/// `σ̃_i² = σ_i² / (a_i^* P a_i)`.
pub fn adjusted_noise(meas: &ComplexMeasurementSet, p: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    meas.vectors
        .iter()
        .zip(&meas.sigma2)
        .enumerate()
        .map(|(i, (a, s2))| {
            if a.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                return Err(Error::Invalid(format!("measurement vector {i} is zero")));
            }
            Ok(s2 / a.dotc(&(p * a)).re)
        })
        .collect()
}

fn check_prior(meas: &ComplexMeasurementSet, p: &DMatrix<Complex64>) -> Result<()> {
    if p.nrows() != meas.dimension() || p.ncols() != meas.dimension() {
        return Err(Error::Dimension(format!(
            "prior is {}×{} but measurement vectors have length {}",
            p.nrows(),
            p.ncols(),
            meas.dimension()
        )));
    }
    Ok(())
}

/// Hermitian design with atoms `a_i a_i^* / σ̃_i²` and prior information `P⁻¹`.
pub fn approx_bound_design(
    meas: &ComplexMeasurementSet,
    p: &DMatrix<Complex64>,
) -> Result<Design<Complex64>> {
    check_prior(meas, p)?;
    let adjusted = adjusted_noise(meas, p)?;
    let atoms = meas
        .vectors
        .iter()
        .zip(&adjusted)
        .enumerate()
        .map(|(i, (a, s2))| InfoAtom::rank_one(a.map(|v| v / s2.sqrt()), i))
        .collect();
    Design::new(linalg::spd_inverse(p, "prior covariance")?, atoms)
}

/// Linearized surrogate at `θ₀`: atoms `g g^* / σ_i²` with `g = a_i a_i^* θ₀`.
pub fn linearized_design(
    meas: &ComplexMeasurementSet,
    p: &DMatrix<Complex64>,
    theta0: &DVector<Complex64>,
) -> Result<Design<Complex64>> {
    check_prior(meas, p)?;
    let atoms = meas
        .vectors
        .iter()
        .zip(&meas.sigma2)
        .enumerate()
        .map(|(i, (a, s2))| {
            let g = a * (a.dotc(theta0) / s2.sqrt());
            InfoAtom::rank_one(g, i)
        })
        .collect();
    Design::new(linalg::spd_inverse(p, "prior covariance")?, atoms)
}

/// Step schedule `μ_t = min(1 − e^{−t/t₀}, μ_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfConfig {
    pub iters: usize,
    pub t0: f64,
    pub mu_max: f64,
}

impl Default for WfConfig {
    fn default() -> Self {
        Self {
            iters: 2500,
            t0: 330.0,
            mu_max: 0.2,
        }
    }
}

impl WfConfig {
    pub fn step(&self, t: usize) -> f64 {
        (1.0 - (-(t as f64) / self.t0).exp()).min(self.mu_max)
    }
}

/// Wirtinger flow on `y` (model `½|a^*θ|²`): spectral initialization, then gradient steps
/// on `(1/4m) Σ (|a_r^* z|² − 2y_r)²`.
pub fn wirtinger_flow(
    meas: &ComplexMeasurementSet,
    y: &DVector<f64>,
    wf: &WfConfig,
) -> Result<DVector<Complex64>> {
    let m = meas.len();
    let n = meas.dimension();
    if y.len() != m {
        return Err(Error::Dimension(format!(
            "{} measurements for {m} vectors",
            y.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::Invalid("no measurements".into()));
    }
    let intensity: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
    let energy: f64 = meas.vectors.iter().map(|a| a.norm_squared()).sum();
    let total: f64 = intensity.iter().sum();
    if total <= 0.0 || energy <= 0.0 {
        return Err(Error::Numerical(
            "spectral initialization: nonpositive total intensity".into(),
        ));
    }
    let lambda = (n as f64 * total / energy).sqrt();
    // curvature grows with the square of the per-entry power of the a_r
    let power = energy / (m * n) as f64;

    let mut spectral = DMatrix::<Complex64>::zeros(n, n);
    for (a, yr) in meas.vectors.iter().zip(&intensity) {
        spectral.ger(Complex64::new(yr / m as f64, 0.0), a, &a.conjugate(), Complex64::new(1.0, 0.0));
    }
    let spectral = linalg::hermitian_part(&spectral);
    let eig = SymmetricEigen::new(spectral);
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("spectral initialization failed".into()))?;
    let v = eig.eigenvectors.column(top).into_owned();
    let norm = v.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Numerical("spectral initialization failed".into()));
    }
    let mut z = v * Complex64::new(lambda / norm, 0.0);
    let z0_norm2 = lambda * lambda;

    let mut grad = DVector::<Complex64>::zeros(n);
    for t in 1..=wf.iters {
        grad.fill(Complex64::new(0.0, 0.0));
        for (a, yr) in meas.vectors.iter().zip(&intensity) {
            let inner = a.dotc(&z);
            let residual = inner.norm_sqr() - yr;
            grad.axpy(inner * residual, a, Complex64::new(1.0, 0.0));
        }
        let step = wf.step(t) / (z0_norm2 * power * power * m as f64);
        z.axpy(Complex64::new(-step, 0.0), &grad, Complex64::new(1.0, 0.0));
    }
    Ok(z)
}

/// `min_φ ‖e^{ιφ}θ̂ − θ‖ / ‖θ‖`.
pub fn nrmse(estimate: &DVector<Complex64>, truth: &DVector<Complex64>) -> f64 {
    let cross = estimate.dotc(truth).norm();
    let sq = (estimate.norm_squared() + truth.norm_squared() - 2.0 * cross).max(0.0);
    sq.sqrt() / truth.norm()
}

/// Standard circularly-symmetric complex Gaussian vector (`E|θ_i|² = 1`).
pub fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(s * re, s * im)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub n: usize,
    pub m: usize,
    pub k_list: Vec<usize>,
    pub ensemble: Ensemble,
    pub noise: NoiseSpec,
    pub trials: usize,
    pub seed: u64,
    pub wf: WfConfig,
    pub schemes: Vec<Scheme>,
    /// Scale DFT rows by `1/√m`.
    pub dft_normalize: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            n: 16,
            m: 160,
            k_list: vec![32, 40, 48, 56, 64, 72],
            ensemble: Ensemble::ComplexGaussian,
            noise: NoiseSpec::Identical { sigma: 0.001 },
            trials: 50,
            seed: 0,
            wf: WfConfig::default(),
            schemes: vec![
                Scheme::Quadratic(Criterion::A),
                Scheme::Quadratic(Criterion::D),
                Scheme::Linearized,
                Scheme::Random,
            ],
            dft_normalize: false,
        }
    }
}

impl PhaseConfig {
    /// `n = 128`, `m = 1280`, `k = 256..=576`.
    pub fn full_scale() -> Self {
        Self {
            n: 128,
            m: 1280,
            k_list: (256..=576).step_by(64).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if self.k_list.is_empty() {
            return Err(Error::Config("k_list is empty".into()));
        }
        if let Some(k) = self.k_list.iter().find(|&&k| k == 0 || k > self.m) {
            return Err(Error::Config(format!("k = {k} outside 1..={}", self.m)));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        if self.wf.t0 <= 0.0 || self.wf.mu_max <= 0.0 {
            return Err(Error::Config("wf.t0 and wf.mu_max must be positive".into()));
        }
        self.noise.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub scheme: String,
    pub criterion: String,
    pub k: usize,
    pub trial: usize,
    pub nrmse: f64,
    pub runtime_ms: f64,
}

/// Median and quartiles of NRMSE over trials for one scheme and budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub scheme: String,
    pub k: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

fn run_trial(config: &PhaseConfig, trial: usize, fixed: Option<&ComplexMeasurementSet>) -> Result<Vec<PhaseRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64);
    let theta = circular_gaussian(&mut rng, config.n);
    let meas = match fixed {
        Some(base) => {
            let mut meas = base.clone();
            meas.sigma2 = config.noise.draw(&mut rng, config.m);
            meas
        }
        None => {
            let sigma2 = config.noise.draw(&mut rng, config.m);
            ComplexMeasurementSet::complex_gaussian(&mut rng, config.n, sigma2)
        }
    };
    let y = meas.simulate(&theta, &mut rng);
    let theta0 = circular_gaussian(&mut rng, config.n);
    let random_seeds: Vec<u64> = config.k_list.iter().map(|_| rng.next_u64()).collect();

    let p = DMatrix::<Complex64>::identity(config.n, config.n);
    let k_max = *config.k_list.iter().max().expect("validated");
    let mut rows = Vec::new();
    for scheme in &config.schemes {
        let started = Instant::now();
        let ranked = match scheme {
            Scheme::Quadratic(c) => {
                let d = approx_bound_design(&meas, &p)?;
                Some(select::lazy_greedy(&d, k_max, *c, None)?.chosen)
            }
            Scheme::Linearized => {
                let surrogate = linearized_design(&meas, &p, &theta0)?;
                Some(select::greedy(&surrogate, k_max, Criterion::A)?.chosen)
            }
            Scheme::Random => None,
        };
        let select_ms = started.elapsed().as_secs_f64() * 1e3;
        for (ki, &k) in config.k_list.iter().enumerate() {
            let started = Instant::now();
            let mut chosen = match &ranked {
                Some(order) => order[..k].to_vec(),
                None => {
                    let mut r = ChaCha8Rng::seed_from_u64(random_seeds[ki]);
                    rand::seq::index::sample(&mut r, config.m, k).into_vec()
                }
            };
            chosen.sort_unstable();
            let picked = meas.subset(&chosen);
            let y_sel = DVector::from_iterator(k, chosen.iter().map(|&i| y[i]));
            let estimate = wirtinger_flow(&picked, &y_sel, &config.wf)?;
            rows.push(PhaseRow {
                scheme: scheme.name().to_string(),
                criterion: scheme.criterion_label(),
                k,
                trial,
                nrmse: nrmse(&estimate, &theta),
                runtime_ms: select_ms + started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(rows)
}

/// Runs every trial (in parallel; output ordered by trial, scheme, k).
pub fn nrmse_experiment(config: &PhaseConfig) -> Result<Vec<PhaseRow>> {
    config.validate()?;
    let fixed = match config.ensemble {
        Ensemble::DftRows => Some(ComplexMeasurementSet::dft_rows(
            config.n,
            vec![0.0; config.m],
            config.dft_normalize,
        )),
        Ensemble::ComplexGaussian => None,
    };
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t, fixed.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Key `scheme` as in the CSV, plus `_<criterion>` for the quadratic schemes.
pub fn scheme_key(row: &PhaseRow) -> String {
    if row.scheme == "quadratic" {
        format!("quadratic_{}", row.criterion)
    } else {
        row.scheme.clone()
    }
}

pub fn summarize(rows: &[PhaseRow]) -> Vec<PhaseSummary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (scheme_key(r), r.k);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scheme, k)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.k == k && scheme_key(r) == scheme)
                .map(|r| r.nrmse)
                .collect();
            let (q25, median, q75) = stats::quartiles(&values);
            PhaseSummary {
                scheme,
                k,
                median,
                q25,
                q75,
            }
        })
        .collect()
}

pub fn write_csv<W: std::io::Write>(rows: &[PhaseRow], out: W) -> Result<()> {
    crate::output::write_csv(rows, out)
}
