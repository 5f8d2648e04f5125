//! Alphabetical criteria and their marginal gains `f_j(S) = f(S ∪ {j}) − f(S)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{BoundState, InfoAtom};
use crate::error::{Error, Result};
use crate::linalg::{self, Scalar};

/// Scalarization of the information matrix `F_S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// `Tr(I_x⁻¹) − Tr(F_S⁻¹)`
    A,
    /// `log det F_S − log det I_x`
    D,
    /// `λ_min(F_S) − λ_min(I_x)`
    E,
    /// `Tr(F_S) − Tr(I_x)`
    T,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::A, Criterion::D, Criterion::E, Criterion::T];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criterion::A => "A",
            Criterion::D => "D",
            Criterion::E => "E",
            Criterion::T => "T",
        };
        f.write_str(s)
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Criterion::A),
            "D" => Ok(Criterion::D),
            "E" => Ok(Criterion::E),
            "T" => Ok(Criterion::T),
            other => Err(Error::Config(format!(
                "unknown criterion `{other}` (expected A, D, E or T)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    Direct,
    Rank1Fastpath,
    LowrankUpdate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub value: f64,
    pub method: GainMethod,
    /// `|fast path − direct|`, filled only in cross-check mode.
    pub residual: Option<f64>,
}

/// Whether fast paths are trusted or recomputed against the direct route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GainMode {
    #[default]
    Production,
    CrossCheck,
}

/// Roundoff allowance below zero, relative to the magnitude the gain is a difference of.
const NEG_TOL: f64 = 1e-9;

fn negativity_scale<T: Scalar>(state: &BoundState<T>, criterion: Criterion) -> f64 {
    let s = state.summary();
    match criterion {
        Criterion::A => s.trace_inv,
        Criterion::D => 1.0,
        Criterion::E | Criterion::T => s.trace,
    }
    .abs()
    .max(1.0)
}

fn direct_gain<T: Scalar>(
    state: &BoundState<T>,
    atom: &InfoAtom<T>,
    criterion: Criterion,
) -> Result<f64> {
    let s = state.summary();
    if criterion == Criterion::T {
        return Ok(atom.trace());
    }
    let next = state.info() + &atom.matrix;
    Ok(match criterion {
        Criterion::T => unreachable!(),
        Criterion::E => linalg::lambda_min(&next) - s.lambda_min,
        Criterion::D => linalg::logdet_spd(&next, "information matrix")? - s.logdet,
        Criterion::A => {
            let chol = linalg::cholesky(&next, "information matrix")?;
            s.trace_inv - linalg::trace_inverse(&chol)
        }
    })
}

/// Low-rank route for `I_j = U U^*`: with `G = F⁻¹U` and `K = I + U^*G`,
/// the D-gain is `log det K` and the A-gain is `Tr(K⁻¹ G^*G)`.
fn factor_gain<T: Scalar>(
    state: &BoundState<T>,
    factor: &DMatrix<T>,
    criterion: Criterion,
) -> Result<f64> {
    let r = factor.ncols();
    let g = state.chol().solve(factor);
    if r == 1 {
        let u = g.column(0);
        let v = factor.column(0);
        let quad = v.dotc(&u).real();
        return Ok(match criterion {
            Criterion::D => quad.ln_1p(),
            Criterion::A => u.dotc(&u).real() / (1.0 + quad),
            _ => unreachable!("factor gains only for A and D"),
        });
    }
    let k = linalg::hermitian_part(&(DMatrix::identity(r, r) + factor.adjoint() * &g));
    let kchol = linalg::cholesky(&k, "capacitance matrix")?;
    Ok(match criterion {
        Criterion::D => linalg::logdet_from_chol(&kchol),
        Criterion::A => linalg::trace_re(&kchol.solve(&(g.adjoint() * &g))),
        _ => unreachable!("factor gains only for A and D"),
    })
}

/// Marginal gain of adding `atom` to `state`.
pub fn gain<T: Scalar>(
    state: &BoundState<T>,
    atom: &InfoAtom<T>,
    criterion: Criterion,
) -> Result<GainReport> {
    gain_with_mode(state, atom, criterion, GainMode::Production)
}

pub fn gain_with_mode<T: Scalar>(
    state: &BoundState<T>,
    atom: &InfoAtom<T>,
    criterion: Criterion,
    mode: GainMode,
) -> Result<GainReport> {
    if state.contains(atom.index) {
        return Err(Error::DuplicateIndex(atom.index));
    }
    let fast = match (&atom.factor, criterion) {
        (Some(u), Criterion::A | Criterion::D) => Some((
            factor_gain(state, u, criterion)?,
            if u.ncols() == 1 {
                GainMethod::Rank1Fastpath
            } else {
                GainMethod::LowrankUpdate
            },
        )),
        _ => None,
    };
    let (raw, method, residual) = match (fast, mode) {
        (Some((v, method)), GainMode::Production) => (v, method, None),
        (Some((v, method)), GainMode::CrossCheck) => {
            let d = direct_gain(state, atom, criterion)?;
            (v, method, Some((v - d).abs()))
        }
        (None, _) => (direct_gain(state, atom, criterion)?, GainMethod::Direct, None),
    };
    let value = clamp_gain(raw, NEG_TOL * negativity_scale(state, criterion), atom.index)?;
    Ok(GainReport {
        value,
        method,
        residual,
    })
}

fn clamp_gain(raw: f64, tol: f64, index: usize) -> Result<f64> {
    if raw.is_nan() {
        return Err(Error::Numerical(format!("gain of atom {index} is NaN")));
    }
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -tol {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative marginal gain {raw:e} for atom {index} (monotonicity violated)"
        )))
    }
}

/// Gains of every atom in `atoms` against `state`, in input order.
pub fn gain_all<T: Scalar>(
    state: &BoundState<T>,
    atoms: &[&InfoAtom<T>],
    criterion: Criterion,
) -> Result<Vec<GainReport>> {
    atoms
        .par_iter()
        .map(|a| gain(state, a, criterion))
        .collect()
}
