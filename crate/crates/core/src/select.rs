//! Subset selection under a cardinality budget: greedy, lazy greedy, exhaustive,
//! random and the linearized (locally optimal) baseline.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{Design, InfoAtom};
use crate::criteria::{gain, gain_all, Criterion};
use crate::error::{Error, Result};
use crate::linalg::{self, Scalar};
use crate::model::Problem;

/// Default cap on `C(n, k)` for exhaustive search.
pub const DEFAULT_EXHAUSTIVE_CAP: f64 = 5e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Greedy,
    LazyGreedy,
    /// Lazy greedy requested, but no finite weak-submodularity bound was available.
    LazyGreedyFallback,
    Exhaustive,
    Random,
    LinearizedGreedy,
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "lazy_greedy" | "lazy" => Ok(Self::LazyGreedy),
            "exhaustive" => Ok(Self::Exhaustive),
            "random" => Ok(Self::Random),
            "linearized" | "linearized_greedy" => Ok(Self::LinearizedGreedy),
            other => Err(Error::Config(format!("unknown selection method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    /// `f` after each step.
    pub utility_trace: Vec<f64>,
    /// Marginal gain realized at each step (greedy variants only; empty otherwise).
    pub step_gains: Vec<f64>,
    pub final_utility: f64,
    pub criterion: Criterion,
    pub method: SelectionMethod,
    pub elapsed: Duration,
    /// Number of marginal-gain (or subset) evaluations performed.
    pub evaluations: usize,
}

#[derive(Serialize)]
struct SelectionJson<'a> {
    chosen: &'a [usize],
    utility_trace: &'a [f64],
    final_utility: f64,
    criterion: Criterion,
    method: SelectionMethod,
    elapsed_ms: f64,
}

impl SelectionResult {
    /// `{chosen, utility_trace, final_utility, criterion, method, elapsed_ms}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SelectionJson {
            chosen: &self.chosen,
            utility_trace: &self.utility_trace,
            final_utility: self.final_utility,
            criterion: self.criterion,
            method: self.method,
            elapsed_ms: self.elapsed.as_secs_f64() * 1e3,
        })
        .expect("selection serializes")
    }
}

fn check_budget(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Budget { k, n });
    }
    Ok(())
}

/// Utilities of the successive prefixes of `chosen`.
fn prefix_trace<T: Scalar>(
    design: &Design<T>,
    chosen: &[usize],
    criterion: Criterion,
) -> Result<Vec<f64>> {
    let mut state = design.empty_state()?;
    let mut trace = Vec::with_capacity(chosen.len());
    for &j in chosen {
        state = state.extend(design.atom(j))?;
        trace.push(state.scalarize(criterion));
    }
    Ok(trace)
}

fn finish(
    chosen: Vec<usize>,
    utility_trace: Vec<f64>,
    step_gains: Vec<f64>,
    criterion: Criterion,
    method: SelectionMethod,
    started: Instant,
    evaluations: usize,
) -> SelectionResult {
    let final_utility = utility_trace.last().copied().unwrap_or(0.0);
    SelectionResult {
        chosen,
        utility_trace,
        step_gains,
        final_utility,
        criterion,
        method,
        elapsed: started.elapsed(),
        evaluations,
    }
}

/// Plain greedy: every round recomputes all marginal gains against the current state and
/// takes the largest, lowest index on ties.
pub fn greedy<T: Scalar>(
    design: &Design<T>,
    k: usize,
    criterion: Criterion,
) -> Result<SelectionResult> {
    let started = Instant::now();
    check_budget(k, design.len())?;
    let mut state = design.empty_state()?;
    let mut remaining: Vec<usize> = (0..design.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut evaluations = 0;
    for _ in 0..k {
        let atoms: Vec<&InfoAtom<T>> = remaining.iter().map(|&j| design.atom(j)).collect();
        let reports = gain_all(&state, &atoms, criterion)?;
        evaluations += reports.len();
        let mut best = 0;
        for (pos, r) in reports.iter().enumerate() {
            if r.value > reports[best].value {
                best = pos;
            }
        }
        let j = remaining.remove(best);
        state = state.extend(design.atom(j))?;
        chosen.push(j);
        gains.push(reports[best].value);
        trace.push(state.scalarize(criterion));
    }
    Ok(finish(
        chosen,
        trace,
        gains,
        criterion,
        SelectionMethod::Greedy,
        started,
        evaluations,
    ))
}

#[derive(Debug)]
struct Candidate {
    key: f64,
    gain: f64,
    index: usize,
    round: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap on key; lower index wins ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Relative slack on stale bounds so roundoff cannot make a stale bound too tight.
const STALE_SLACK: f64 = 1e-12;

/// Lazy greedy with stale upper bounds `c · f_j(S_old)`.
///
/// `c = 1` for D and T. For A and E the caller passes a weak-submodularity bound; without
/// a finite one the plain greedy path runs and the result is tagged as a fallback.
pub fn lazy_greedy<T: Scalar>(
    design: &Design<T>,
    k: usize,
    criterion: Criterion,
    c_bound: Option<f64>,
) -> Result<SelectionResult> {
    let inflation = match criterion {
        Criterion::D | Criterion::T => 1.0,
        Criterion::A | Criterion::E => match c_bound {
            Some(c) if c.is_finite() => c.max(1.0),
            _ => {
                let mut r = greedy(design, k, criterion)?;
                r.method = SelectionMethod::LazyGreedyFallback;
                return Ok(r);
            }
        },
    };
    let started = Instant::now();
    check_budget(k, design.len())?;
    let mut state = design.empty_state()?;
    let atoms: Vec<&InfoAtom<T>> = design.atoms().iter().collect();
    let initial = gain_all(&state, &atoms, criterion)?;
    let mut evaluations = initial.len();
    let mut pool: Vec<Candidate> = initial
        .iter()
        .enumerate()
        .map(|(index, r)| Candidate {
            key: r.value,
            gain: r.value,
            index,
            round: 0,
        })
        .collect();

    let mut chosen = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    for round in 0..k {
        for c in pool.iter_mut().filter(|c| c.round != round) {
            c.key = c.gain * inflation * (1.0 + STALE_SLACK) + f64::MIN_POSITIVE;
        }
        let mut heap: BinaryHeap<Candidate> = pool.drain(..).collect();
        let picked = loop {
            let top = heap.pop().expect("candidates remain while round < k <= n");
            if top.round == round {
                break top;
            }
            let g = gain(&state, design.atom(top.index), criterion)?.value;
            evaluations += 1;
            heap.push(Candidate {
                key: g,
                gain: g,
                index: top.index,
                round,
            });
        };
        state = state.extend(design.atom(picked.index))?;
        chosen.push(picked.index);
        gains.push(picked.gain);
        trace.push(state.scalarize(criterion));
        pool = heap.into_vec();
    }
    Ok(finish(
        chosen,
        trace,
        gains,
        criterion,
        SelectionMethod::LazyGreedy,
        started,
        evaluations,
    ))
}

/// `C(n, k)` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Global maximizer over all size-`k` subsets; ties go to the lexicographically first.
pub fn exhaustive<T: Scalar>(
    design: &Design<T>,
    k: usize,
    criterion: Criterion,
    cap: f64,
) -> Result<SelectionResult> {
    let started = Instant::now();
    let n = design.len();
    check_budget(k, n)?;
    let count = binomial(n, k);
    if count > cap {
        return Err(Error::CapExceeded { n, k, count, cap });
    }
    let best = (0..n)
        .combinations(k)
        .enumerate()
        .par_bridge()
        .map(|(rank, subset)| {
            let v = design.utility(&subset, criterion).unwrap_or(f64::NAN);
            (v, rank, subset)
        })
        .reduce_with(|a, b| {
            let a_wins = match (a.0.is_nan(), b.0.is_nan()) {
                (true, false) => false,
                (false, true) => true,
                _ => a.0 > b.0 || (a.0 == b.0 && a.1 < b.1),
            };
            if a_wins {
                a
            } else {
                b
            }
        })
        .expect("at least one subset");
    if best.0.is_nan() {
        return Err(Error::Numerical("every subset utility failed".into()));
    }
    let chosen = best.2;
    let trace = prefix_trace(design, &chosen, criterion)?;
    Ok(finish(
        chosen,
        trace,
        Vec::new(),
        criterion,
        SelectionMethod::Exhaustive,
        started,
        count as usize,
    ))
}

/// Uniform `k`-subset without replacement from a seeded stream.
pub fn random<T: Scalar>(
    design: &Design<T>,
    k: usize,
    criterion: Criterion,
    seed: u64,
) -> Result<SelectionResult> {
    let started = Instant::now();
    check_budget(k, design.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, design.len(), k).into_vec();
    let trace = prefix_trace(design, &chosen, criterion)?;
    Ok(finish(
        chosen,
        trace,
        Vec::new(),
        criterion,
        SelectionMethod::Random,
        started,
        0,
    ))
}

/// Greedy on a surrogate design; the reported trace is re-evaluated on `truth`.
pub fn linearized_with<T: Scalar>(
    surrogate: &Design<T>,
    truth: &Design<T>,
    k: usize,
    criterion: Criterion,
) -> Result<SelectionResult> {
    let started = Instant::now();
    if surrogate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "surrogate has {} atoms, truth has {}",
            surrogate.len(),
            truth.len()
        )));
    }
    let picked = greedy(surrogate, k, criterion)?;
    let trace = prefix_trace(truth, &picked.chosen, criterion)?;
    Ok(finish(
        picked.chosen,
        trace,
        Vec::new(),
        criterion,
        SelectionMethod::LinearizedGreedy,
        started,
        picked.evaluations,
    ))
}

/// Surrogate design of the model linearized at `theta0`: atoms `∇g_i ∇g_iᵀ / σ_i²` with
/// `∇g_i = ½(X_i + X_iᵀ)θ₀ + z_i`, prior information `P⁻¹`.
pub fn linearized_design(problem: &Problem, theta0: &DVector<f64>) -> Result<Design<f64>> {
    if theta0.len() != problem.dimension() {
        return Err(Error::Dimension(format!(
            "theta0 has length {} but problem dimension is {}",
            theta0.len(),
            problem.dimension()
        )));
    }
    let atoms = problem
        .observations
        .iter()
        .enumerate()
        .map(|(i, obs)| InfoAtom::rank_one(obs.gradient(theta0) / obs.sigma2.sqrt(), i))
        .collect();
    let fisher = linalg::spd_inverse(&problem.prior.covariance, "prior covariance")?;
    Design::new(fisher, atoms)
}

/// Locally optimal baseline: linearize at `theta0` (default: the prior mean), select
/// greedily on the surrogate, report utilities under the Van Trees objective.
pub fn linearized(
    problem: &Problem,
    k: usize,
    criterion: Criterion,
    theta0: Option<&DVector<f64>>,
) -> Result<SelectionResult> {
    let theta0 = theta0.unwrap_or(&problem.prior.mean);
    let surrogate = linearized_design(problem, theta0)?;
    let truth = Design::from_problem(problem)?;
    linearized_with(&surrogate, &truth, k, criterion)
}

/// Where the constants behind a certificate came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateSource {
    TheoreticalBound,
    EmpiricalBruteforce,
}

/// Approximation guarantee of greedy under weak submodularity constants `c_f`, `ε_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCertificate {
    /// `max{c_f, 1}`.
    pub c: f64,
    /// `1 − e^{−1/c}`.
    pub ratio_bound: f64,
    /// `(1 − 1/e)(f(S*) − (k−1)ε_f)` when `ε_f` and `f(S*)` are known.
    pub additive_bound: Option<f64>,
    pub source: CertificateSource,
}

impl GuaranteeCertificate {
    pub fn new(
        c_f: f64,
        eps_f: Option<f64>,
        optimum: Option<f64>,
        k: usize,
        source: CertificateSource,
    ) -> Self {
        let c = c_f.max(1.0);
        let ratio_bound = if c.is_finite() {
            1.0 - (-1.0 / c).exp()
        } else {
            0.0
        };
        let additive_bound = match (eps_f, optimum) {
            (Some(eps), Some(opt)) if eps.is_finite() => {
                Some((1.0 - (-1.0f64).exp()) * (opt - (k as f64 - 1.0) * eps))
            }
            _ => None,
        };
        Self {
            c,
            ratio_bound,
            additive_bound,
            source,
        }
    }
}

/// Selection scheme of the application experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Quadratic(Criterion),
    Linearized,
    Random,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Quadratic(_) => "quadratic",
            Scheme::Linearized => "linearized",
            Scheme::Random => "random",
        }
    }

    /// Criterion column; the linearized surrogate is optimized under A.
    pub fn criterion_label(&self) -> String {
        match self {
            Scheme::Quadratic(c) => c.to_string(),
            Scheme::Linearized => Criterion::A.to_string(),
            Scheme::Random => "none".to_string(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Quadratic(c) => write!(f, "quadratic_{c}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearized" => Ok(Scheme::Linearized),
            "random" => Ok(Scheme::Random),
            other => match other.strip_prefix("quadratic_") {
                Some(c) => Ok(Scheme::Quadratic(c.parse()?)),
                None => Err(Error::Config(format!("unknown scheme `{other}`"))),
            },
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> Self {
        s.to_string()
    }
}
