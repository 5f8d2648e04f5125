//! Verification tools: brute-force weak-submodularity constants, the closed-form bounds on
//! them for the E and A criteria, the nested-pair inequalities they imply, and a
//! Monte-Carlo estimate of the Van Trees information.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::bound::Design;
use crate::criteria::{self, Criterion};
use crate::error::{Error, Result};
use crate::linalg::{self, Scalar};
use crate::model::Problem;
use crate::select::{self, CertificateSource, GuaranteeCertificate};

/// Default ground-set cap for brute-force enumeration.
pub const DEFAULT_WSC_CAP: usize = 10;
/// Gains at or below this are treated as zero when forming ratios.
pub const ZERO_GAIN: f64 = 1e-12;
/// Samples per work item in the Monte-Carlo oracle. Part of the reproducibility contract.
pub const MC_CHUNK: usize = 8192;

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn mask_to_set(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize)
        .filter(|b| mask >> b & 1 == 1)
        .collect()
}

/// `f(S)` and every marginal gain `f_j(S)`, for every subset of the ground set, indexed
/// by bitmask. Gains come from the marginal-gain routine rather than from differences of
/// utilities, so they keep their relative accuracy when an atom is small.
#[derive(Clone, Debug)]
pub struct UtilityTable {
    n: usize,
    values: Vec<f64>,
    gains: Vec<f64>,
}

impl UtilityTable {
    pub fn build<T: Scalar>(design: &Design<T>, criterion: Criterion, n_cap: usize) -> Result<Self> {
        let n = design.len();
        if n > n_cap {
            return Err(Error::CapExceeded {
                n,
                k: n,
                count: 2f64.powi(n as i32),
                cap: 2f64.powi(n_cap as i32),
            });
        }
        let rows = (0..1usize << n)
            .into_par_iter()
            .map(|mask| {
                let state = design.state_for(&mask_to_set(mask))?;
                let gains = (0..n)
                    .map(|j| {
                        if mask >> j & 1 == 1 {
                            Ok(f64::NAN)
                        } else {
                            Ok(criteria::gain(&state, design.atom(j), criterion)?.value)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((state.scalarize(criterion), gains))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(rows.len());
        let mut gains = Vec::with_capacity(rows.len() * n);
        for (v, g) in rows {
            values.push(v);
            gains.extend(g);
        }
        Ok(Self { n, values, gains })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    /// `f_j(S) = f(S ∪ {j}) − f(S)` for `j ∉ S`.
    pub fn gain(&self, mask: usize, j: usize) -> f64 {
        debug_assert_eq!(mask >> j & 1, 0, "j must lie outside S");
        self.gains[mask * self.n + j]
    }
}

/// `(S, T, j)` attaining the empirical multiplicative constant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    #[serde(rename = "S")]
    pub s: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
    pub j: usize,
}

/// Empirical constants from exhaustive enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct Empirical {
    pub c: f64,
    pub eps: f64,
    pub witness: Option<Witness>,
}

#[derive(Clone, Copy)]
struct Best {
    c: f64,
    witness: Option<(usize, usize, usize)>,
    eps: f64,
}

fn scan_superset(table: &UtilityTable, t: usize) -> Best {
    let n = table.n();
    let mut best = Best {
        c: f64::NEG_INFINITY,
        witness: None,
        eps: f64::NEG_INFINITY,
    };
    let mut s = 0usize;
    loop {
        for j in (0..n).filter(|j| t >> j & 1 == 0) {
            let num = table.gain(t, j);
            let den = table.gain(s, j);
            best.eps = best.eps.max(num - den);
            let ratio = if den <= ZERO_GAIN {
                if num > ZERO_GAIN {
                    f64::INFINITY
                } else {
                    continue;
                }
            } else {
                num / den
            };
            if ratio > best.c {
                best.c = ratio;
                best.witness = Some((s, t, j));
            }
        }
        if s == t {
            break;
        }
        s = s.wrapping_sub(t) & t;
    }
    best
}

/// Enumerates every `S ⊆ T ⊂ 𝒳`, `j ∉ T` (T ascending, S ascending within T, j ascending)
/// and returns `c = max f_j(T)/f_j(S)`, `ε = max f_j(T) − f_j(S)` with the first triple
/// attaining `c`.
pub fn empirical_wsc(table: &UtilityTable) -> Empirical {
    let full = (1usize << table.n()) - 1;
    let per_t: Vec<Best> = (0..full)
        .into_par_iter()
        .map(|t| scan_superset(table, t))
        .collect();
    let mut c = f64::NEG_INFINITY;
    let mut eps = f64::NEG_INFINITY;
    let mut witness = None;
    for b in per_t {
        eps = eps.max(b.eps);
        if b.c > c {
            c = b.c;
            witness = b.witness;
        }
    }
    Empirical {
        // only 0/0 pairs: treated as ratio 1
        c: if witness.is_some() { c } else { 1.0 },
        eps: if eps.is_finite() { eps } else { 0.0 },
        witness: witness.map(|(s, t, j)| Witness {
            s: mask_to_set(s),
            t: mask_to_set(t),
            j,
        }),
    }
}

/// Per-observation quantities behind the A-criterion bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaTerms {
    pub gamma: Vec<f64>,
    /// `λ_min(B_[n])` with `B_[n] = F_[n]⁻¹` over the whole ground set.
    pub lambda_min_b_full: f64,
    /// `λ_max(I_x⁻¹)`.
    pub lambda_max_ix_inv: f64,
    /// `(λ_min, λ_max)` of `σ_j² P`.
    pub sigma2_p_extremes: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WscBoundA {
    Bound {
        c_bound: f64,
        eps_bound: f64,
        terms: GammaTerms,
    },
    NotApplicable(String),
}

/// `c ≤ max_j λ_max(I_j)/λ_min(I_j)` (`+∞` if some `λ_min(I_j) ≤ 1e-12`) and
/// `ε ≤ max_j λ_max(I_j) − λ_min(I_j)`.
pub fn wsc_bound_e<T: Scalar>(design: &Design<T>) -> (f64, f64) {
    let mut c: f64 = 0.0;
    let mut eps: f64 = 0.0;
    for atom in design.atoms() {
        let (lo, hi) = linalg::eig_extremes(&atom.matrix);
        c = if lo <= ZERO_GAIN { f64::INFINITY } else { c.max(hi / lo) };
        eps = eps.max(hi - lo);
    }
    (c, eps)
}

fn rank_one_psd(x: &DMatrix<f64>) -> bool {
    let xs = linalg::hermitian_part(x);
    if linalg::rel_frobenius(&xs, x) > 1e-12 {
        return false;
    }
    let eig = linalg::eigenvalues(&xs);
    let top = eig.last().copied().unwrap_or(0.0);
    let tol = 1e-10 * top.abs().max(f64::MIN_POSITIVE);
    top > 0.0 && eig[..eig.len() - 1].iter().all(|v| v.abs() <= tol)
}

/// Bound for the A criterion, valid when every observation is `x_i x_iᵀ` with `z_i = 0`
/// (zero prior mean). Otherwise returns [`WscBoundA::NotApplicable`].
pub fn wsc_bound_a(problem: &Problem) -> Result<WscBoundA> {
    if problem.prior.mean.iter().any(|v| *v != 0.0) {
        return Ok(WscBoundA::NotApplicable("prior mean is nonzero".into()));
    }
    for (i, obs) in problem.observations.iter().enumerate() {
        if obs.z.iter().any(|v| *v != 0.0) {
            return Ok(WscBoundA::NotApplicable(format!("observation {i} has z != 0")));
        }
        if obs.x_factor.is_none() && !rank_one_psd(&obs.x) {
            return Ok(WscBoundA::NotApplicable(format!(
                "observation {i} is not of the form x xᵀ"
            )));
        }
    }
    let design = Design::from_problem(problem)?;
    let all: Vec<usize> = (0..design.len()).collect();
    let f_full = design.info_for(&all);
    let lambda_min_b_full = 1.0 / linalg::eig_extremes(&f_full).1;
    let ix = &problem.prior.fisher;
    let ix_inv = linalg::spd_inverse(ix, "prior fisher information")?;
    let lambda_max_ix_inv = 1.0 / linalg::lambda_min(ix);
    let (p_lo, p_hi) = linalg::eig_extremes(&problem.prior.covariance);

    let mut gamma = Vec::with_capacity(problem.len());
    let mut extremes = Vec::with_capacity(problem.len());
    let mut c_bound = f64::NEG_INFINITY;
    let mut eps_bound = f64::NEG_INFINITY;
    for obs in &problem.observations {
        let (lo, hi) = (obs.sigma2 * p_lo, obs.sigma2 * p_hi);
        let g = lambda_max_ix_inv.powi(2) * (hi + 1.0)
            / (lambda_min_b_full.powi(2) * (lo + 1.0));
        let shifted = &problem.prior.covariance * obs.sigma2 + &ix_inv;
        let denom = linalg::eig_extremes(&shifted).1;
        c_bound = c_bound.max(g);
        eps_bound = eps_bound.max(lambda_min_b_full.powi(2) / denom * (g - 1.0));
        gamma.push(g);
        extremes.push((lo, hi));
    }
    Ok(WscBoundA::Bound {
        c_bound,
        eps_bound,
        terms: GammaTerms {
            gamma,
            lambda_min_b_full,
            lambda_max_ix_inv,
            sigma2_p_extremes: extremes,
        },
    })
}

/// Empirical constants next to the theoretical ones for one criterion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WscReport {
    pub criterion: Criterion,
    #[serde(serialize_with = "finite_or_null")]
    pub c_empirical: f64,
    pub eps_empirical: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub c_bound: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub eps_bound: f64,
    pub witness: Option<Witness>,
    pub n: usize,
    pub m: usize,
}

impl WscReport {
    /// Empirical constants within the theoretical ones (1e-7 slack).
    pub fn is_sound(&self) -> bool {
        within_bounds(self.c_empirical, self.eps_empirical, self.c_bound, self.eps_bound)
    }
}

fn within_bounds(c: f64, eps: f64, c_bound: f64, eps_bound: f64) -> bool {
    let c_ok = !c_bound.is_finite() || c <= c_bound + 1e-7;
    let e_ok = !eps_bound.is_finite() || eps <= eps_bound + 1e-7;
    c_ok && e_ok
}

/// Theoretical `(c, ε)` bounds: D is submodular, T modular, E and A use their closed forms.
pub fn wsc_bounds(problem: &Problem, design: &Design<f64>, criterion: Criterion) -> Result<(f64, f64)> {
    Ok(match criterion {
        Criterion::D | Criterion::T => (1.0, 0.0),
        Criterion::E => wsc_bound_e(design),
        Criterion::A => match wsc_bound_a(problem)? {
            WscBoundA::Bound {
                c_bound, eps_bound, ..
            } => (c_bound, eps_bound),
            WscBoundA::NotApplicable(_) => (f64::INFINITY, f64::INFINITY),
        },
    })
}

pub fn wsc_bruteforce(problem: &Problem, criterion: Criterion, n_cap: usize) -> Result<WscReport> {
    let design = Design::from_problem(problem)?;
    let table = UtilityTable::build(&design, criterion, n_cap)?;
    let emp = empirical_wsc(&table);
    let (c_bound, eps_bound) = wsc_bounds(problem, &design, criterion)?;
    Ok(WscReport {
        criterion,
        c_empirical: emp.c,
        eps_empirical: emp.eps,
        c_bound,
        eps_bound,
        witness: emp.witness,
        n: design.len(),
        m: design.dimension(),
    })
}

/// Both sides of the nested-pair inequalities for `S ⊆ T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NestedPair {
    /// `f(T) − f(S)`.
    pub lhs: f64,
    /// `(1 + (r−1)c)/r · Σ_{j∈T∖S} f_j(S)`.
    pub multiplicative: f64,
    /// `(r−1)ε + Σ_{j∈T∖S} f_j(S)`.
    pub additive: f64,
}

pub fn nested_pair(table: &UtilityTable, s: usize, t: usize, c: f64, eps: f64) -> NestedPair {
    assert_eq!(s & !t, 0, "S must be a subset of T");
    let diff = t & !s;
    let r = diff.count_ones() as f64;
    let lhs = table.value(t) - table.value(s);
    if r == 0.0 {
        return NestedPair {
            lhs,
            multiplicative: 0.0,
            additive: 0.0,
        };
    }
    let sum: f64 = mask_to_set(diff).into_iter().map(|j| table.gain(s, j)).sum();
    NestedPair {
        lhs,
        multiplicative: (1.0 + (r - 1.0) * c) / r * sum,
        additive: (r - 1.0) * eps + sum,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop1Report {
    pub criterion: Criterion,
    pub pairs: usize,
    pub c_empirical: f64,
    pub eps_empirical: f64,
    /// Largest `lhs − rhs` seen for each inequality.
    pub max_violation_multiplicative: f64,
    pub max_violation_additive: f64,
    /// Pairs violating either inequality by more than 1e-8.
    pub violations: usize,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks both nested-pair inequalities on `trials` random pairs `S ⊆ T` using the
/// empirical constants of the instance.
pub fn prop1_check(
    problem: &Problem,
    criterion: Criterion,
    trials: usize,
    seed: u64,
    n_cap: usize,
) -> Result<Prop1Report> {
    let design = Design::from_problem(problem)?;
    let table = UtilityTable::build(&design, criterion, n_cap)?;
    let emp = empirical_wsc(&table);
    let n = table.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_mult = f64::NEG_INFINITY;
    let mut worst_add = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let t: usize = rng.random_range(0..1usize << n);
        let s = t & rng.random_range(0..1usize << n);
        let pair = nested_pair(&table, s, t, emp.c, emp.eps);
        let vm = if emp.c.is_finite() {
            pair.lhs - pair.multiplicative
        } else {
            f64::NEG_INFINITY
        };
        let va = pair.lhs - pair.additive;
        worst_mult = worst_mult.max(vm);
        worst_add = worst_add.max(va);
        if vm > 1e-8 || va > 1e-8 {
            violations += 1;
        }
    }
    Ok(Prop1Report {
        criterion,
        pairs: trials,
        c_empirical: emp.c,
        eps_empirical: emp.eps,
        max_violation_multiplicative: worst_mult,
        max_violation_additive: worst_add,
        violations,
    })
}

/// Greedy against the exhaustive optimum, with both approximation guarantees evaluated
/// from the empirical constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub criterion: Criterion,
    pub k: usize,
    pub greedy: f64,
    pub optimum: f64,
    pub greedy_set: Vec<usize>,
    pub optimal_set: Vec<usize>,
    pub certificate: GuaranteeCertificate,
    pub multiplicative_ok: bool,
    pub additive_ok: bool,
}

pub fn guarantee_check(
    problem: &Problem,
    k: usize,
    criterion: Criterion,
    n_cap: usize,
) -> Result<GuaranteeReport> {
    let design = Design::from_problem(problem)?;
    let table = UtilityTable::build(&design, criterion, n_cap)?;
    let emp = empirical_wsc(&table);
    let greedy = select::greedy(&design, k, criterion)?;
    let opt = select::exhaustive(&design, k, criterion, select::DEFAULT_EXHAUSTIVE_CAP)?;
    let cert = GuaranteeCertificate::new(
        emp.c,
        Some(emp.eps),
        Some(opt.final_utility),
        k,
        CertificateSource::EmpiricalBruteforce,
    );
    let g = greedy.final_utility;
    Ok(GuaranteeReport {
        criterion,
        k,
        greedy: g,
        optimum: opt.final_utility,
        greedy_set: greedy.chosen,
        optimal_set: opt.chosen,
        multiplicative_ok: g >= cert.ratio_bound * opt.final_utility - 1e-8,
        additive_ok: cert.additive_bound.is_none_or(|b| g >= b - 1e-8),
        certificate: cert,
    })
}

/// Copy of `problem` with every noise variance divided by `snr`.
pub fn scale_snr(problem: &Problem, snr: f64) -> Problem {
    let mut p = problem.clone();
    for o in &mut p.observations {
        o.sigma2 /= snr;
    }
    p
}

/// One brute-force evaluation in an SNR sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub criterion: Criterion,
    pub instance: usize,
    pub snr: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub c_empirical: f64,
    pub eps_empirical: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub c_bound: f64,
    #[serde(serialize_with = "finite_or_null")]
    pub eps_bound: f64,
}

impl SweepRow {
    pub fn c_gap(&self) -> f64 {
        self.c_bound - self.c_empirical
    }

    pub fn eps_gap(&self) -> f64 {
        self.eps_bound - self.eps_empirical
    }

    pub fn is_sound(&self) -> bool {
        within_bounds(self.c_empirical, self.eps_empirical, self.c_bound, self.eps_bound)
    }
}

/// Brute-force constants of each base problem rescaled to every SNR in `snrs`.
/// Rows are ordered by instance, then SNR, then criterion.
pub fn snr_sweep(
    problems: &[Problem],
    snrs: &[f64],
    criteria: &[Criterion],
    n_cap: usize,
) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, f64, Criterion)> = (0..problems.len())
        .flat_map(|i| {
            snrs.iter()
                .flat_map(move |&s| criteria.iter().map(move |&c| (i, s, c)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(i, snr, criterion)| {
            let r = wsc_bruteforce(&scale_snr(&problems[i], snr), criterion, n_cap)?;
            Ok(SweepRow {
                criterion,
                instance: i,
                snr,
                c_empirical: r.c_empirical,
                eps_empirical: r.eps_empirical,
                c_bound: r.c_bound,
                eps_bound: r.eps_bound,
            })
        })
        .collect()
}

/// Monte-Carlo estimate of the Van Trees information next to its closed form.
#[derive(Clone, Debug)]
pub struct McFisher {
    pub estimate: DMatrix<f64>,
    pub closed_form: DMatrix<f64>,
    /// `‖estimate − closed_form‖_F / ‖closed_form‖_F`.
    pub rel_error: f64,
    /// Norm of the empirical mean score.
    pub mean_score_norm: f64,
    /// `5·√(Tr F / samples)`.
    pub mean_score_limit: f64,
    pub samples: usize,
}

/// Averages `s sᵀ` over draws `θ ~ N(μ, P)`, `ν_i ~ N(0, σ_i²)`, where `s` is the prior
/// score `−P⁻¹(θ − μ)` plus the likelihood score `Σ_i (½(X_i+X_iᵀ)θ + z_i) ν_i / σ_i²`.
///
/// Sample `i` draws from stream `i` of the seeded generator; chunk sums are reduced in
/// chunk order, so the result does not depend on the thread count.
pub fn mc_fisher_oracle(
    problem: &Problem,
    subset: &[usize],
    samples: usize,
    seed: u64,
) -> Result<McFisher> {
    if !problem.prior.gaussian {
        return Err(Error::Invalid(
            "monte-carlo oracle needs a gaussian prior".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::Invalid("samples must be positive".into()));
    }
    let m = problem.dimension();
    let mut seen = vec![false; problem.len()];
    for &j in subset {
        if j >= problem.len() {
            return Err(Error::Invalid(format!("index {j} out of range")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::DuplicateIndex(j));
        }
    }
    let design = Design::from_problem(problem)?;
    let closed_form = design.info_for(subset);

    let chol = linalg::cholesky(&problem.prior.covariance, "prior covariance")?;
    let l = chol.l();
    let p_inv = linalg::spd_inverse(&problem.prior.covariance, "prior covariance")?;
    let terms: Vec<(DMatrix<f64>, DVector<f64>, f64)> = subset
        .iter()
        .map(|&j| {
            let obs = &problem.observations[j];
            (linalg::hermitian_part(&obs.x), obs.z.clone(), obs.sigma2)
        })
        .collect();
    let mean = &problem.prior.mean;
    let base = ChaCha8Rng::seed_from_u64(seed);

    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(DMatrix<f64>, DVector<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut outer = DMatrix::<f64>::zeros(m, m);
            let mut sum = DVector::<f64>::zeros(m);
            let mut w = DVector::<f64>::zeros(m);
            for i in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(samples) {
                let mut rng = base.clone();
                rng.set_stream(i as u64);
                for v in w.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let dev = &l * &w;
                let theta = mean + &dev;
                let mut score = -(&p_inv * &dev);
                for (xs, z, s2) in &terms {
                    let nu: f64 = StandardNormal.sample(&mut rng);
                    let nu = nu * s2.sqrt();
                    score += (xs * &theta + z) * (nu / s2);
                }
                outer.ger(1.0, &score, &score, 1.0);
                sum += &score;
            }
            (outer, sum)
        })
        .collect();
    let mut outer = DMatrix::<f64>::zeros(m, m);
    let mut sum = DVector::<f64>::zeros(m);
    for (o, s) in partial {
        outer += o;
        sum += s;
    }
    let n = samples as f64;
    let estimate = outer / n;
    let mean_score_norm = (sum / n).norm();
    let trace_f = closed_form.trace();
    Ok(McFisher {
        rel_error: linalg::rel_frobenius(&estimate, &closed_form),
        estimate,
        closed_form,
        mean_score_norm,
        mean_score_limit: 5.0 * (trace_f / n).sqrt(),
        samples,
    })
}
