//! The Van Trees information matrix `F_S = I_x + Σ_{i∈S} I_i` (the inverse of the bound
//! `B_S`) and its incremental maintenance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::linalg::{self, Scalar};
use crate::model::Problem;

/// Per-observation information `I_j = (X_j P X_jᵀ + z_j z_jᵀ) / σ_j²`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoAtom<T: Scalar> {
    pub matrix: DMatrix<T>,
    /// Optional `m×r` factor `U` with `matrix == U U^*`; present only for structurally
    /// low-rank observations (`X = 0`, or an explicit outer product `X = x xᵀ`).
    pub factor: Option<DMatrix<T>>,
    pub index: usize,
}

impl<T: Scalar> InfoAtom<T> {
    /// Atom from an explicit factor `U` (`I = U U^*`).
    pub fn from_factor(factor: DMatrix<T>, index: usize) -> Self {
        let matrix = linalg::hermitian_part(&(&factor * factor.adjoint()));
        Self {
            matrix,
            factor: Some(factor),
            index,
        }
    }

    /// Rank-one atom `v v^*`.
    pub fn rank_one(v: DVector<T>, index: usize) -> Self {
        let n = v.len();
        Self::from_factor(DMatrix::from_column_slice(n, 1, v.as_slice()), index)
    }

    pub fn dense(matrix: DMatrix<T>, index: usize) -> Self {
        Self {
            matrix: linalg::hermitian_part(&matrix),
            factor: None,
            index,
        }
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace_re(&self.matrix)
    }

    /// Rank-one vector when the factor has a single column.
    pub fn rank1_vector(&self) -> Option<DVector<T>> {
        self.factor
            .as_ref()
            .filter(|f| f.ncols() == 1)
            .map(|f| f.column(0).into_owned())
    }
}

/// Builds `I_j` for observation `j` of `problem`.
///
/// Uses the symmetric part of `X_j` (the model only sees `½(X + Xᵀ)`), and the centered
/// linear term `z̃_j = ½(X_j + X_jᵀ)μ + z_j` when the prior mean is nonzero.
pub fn info_atom(problem: &Problem, j: usize) -> InfoAtom<f64> {
    let obs = &problem.observations[j];
    let p = &problem.prior.covariance;
    let xs = linalg::hermitian_part(&obs.x);
    let z = if problem.is_centered() {
        obs.z.clone()
    } else {
        &xs * &problem.prior.mean + &obs.z
    };
    let inv_sigma = 1.0 / obs.sigma2.sqrt();
    let m = problem.dimension();

    if obs.is_linear() {
        return InfoAtom::rank_one(z * inv_sigma, j);
    }
    if let Some(x) = &obs.x_factor {
        let scale = x.dot(&(p * x)).max(0.0).sqrt();
        let first = x * (scale * inv_sigma);
        let factor = if z.iter().all(|v| *v == 0.0) {
            DMatrix::from_column_slice(m, 1, first.as_slice())
        } else {
            let mut f = DMatrix::zeros(m, 2);
            f.set_column(0, &first);
            f.set_column(1, &(z * inv_sigma));
            f
        };
        return InfoAtom::from_factor(factor, j);
    }
    let matrix = (&xs * p * xs.transpose() + &z * z.transpose()) / obs.sigma2;
    InfoAtom::dense(matrix, j)
}

/// Scalar summaries of a positive-definite information matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub trace: f64,
    pub trace_inv: f64,
    pub logdet: f64,
    pub lambda_min: f64,
}

impl Summary {
    fn of<T: Scalar>(info: &DMatrix<T>, chol: &Cholesky<T, Dyn>) -> Self {
        Self {
            trace: linalg::trace_re(info),
            trace_inv: linalg::trace_inverse(chol),
            logdet: linalg::logdet_from_chol(chol),
            lambda_min: linalg::lambda_min(info),
        }
    }

    /// Criterion value relative to a baseline (the prior).
    pub fn relative_to(&self, base: &Summary, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::T => self.trace - base.trace,
            Criterion::D => self.logdet - base.logdet,
            Criterion::E => self.lambda_min - base.lambda_min,
            Criterion::A => base.trace_inv - self.trace_inv,
        }
    }
}

/// Prior information plus the ground set of atoms: everything a selection needs.
#[derive(Clone, Debug)]
pub struct Design<T: Scalar> {
    fisher: DMatrix<T>,
    atoms: Vec<InfoAtom<T>>,
    baseline: Summary,
}

impl<T: Scalar> Design<T> {
    pub fn new(fisher: DMatrix<T>, atoms: Vec<InfoAtom<T>>) -> Result<Self> {
        let m = fisher.nrows();
        if !fisher.is_square() {
            return Err(Error::Dimension("prior fisher must be square".into()));
        }
        for (pos, atom) in atoms.iter().enumerate() {
            if atom.index != pos {
                return Err(Error::Invalid(format!(
                    "atom at position {pos} carries index {}",
                    atom.index
                )));
            }
            if atom.dimension() != m {
                return Err(Error::Dimension(format!(
                    "atom {pos} has dimension {} but prior has {m}",
                    atom.dimension()
                )));
            }
        }
        let fisher = linalg::hermitian_part(&fisher);
        let chol = linalg::cholesky(&fisher, "prior fisher information")?;
        let baseline = Summary::of(&fisher, &chol);
        Ok(Self {
            fisher,
            atoms,
            baseline,
        })
    }

    pub fn fisher(&self) -> &DMatrix<T> {
        &self.fisher
    }

    pub fn atoms(&self) -> &[InfoAtom<T>] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &InfoAtom<T> {
        &self.atoms[j]
    }

    pub fn baseline(&self) -> &Summary {
        &self.baseline
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.fisher.nrows()
    }

    pub fn empty_state(&self) -> Result<BoundState<T>> {
        BoundState::empty(self.fisher.clone())
    }

    /// `I_x + Σ_{i∈subset} I_i`, summed from scratch.
    pub fn info_for(&self, subset: &[usize]) -> DMatrix<T> {
        let mut f = self.fisher.clone();
        for &i in subset {
            f += &self.atoms[i].matrix;
        }
        f
    }

    /// Criterion value of `subset`, computed without incremental caches.
    pub fn utility(&self, subset: &[usize], criterion: Criterion) -> Result<f64> {
        let f = self.info_for(subset);
        let value = match criterion {
            Criterion::T => linalg::trace_re(&f) - self.baseline.trace,
            Criterion::D => {
                linalg::logdet_spd(&f, "information matrix")? - self.baseline.logdet
            }
            Criterion::E => linalg::lambda_min(&f) - self.baseline.lambda_min,
            Criterion::A => {
                let chol = linalg::cholesky(&f, "information matrix")?;
                self.baseline.trace_inv - linalg::trace_inverse(&chol)
            }
        };
        Ok(value)
    }

    /// State for `subset`, built by successive [`BoundState::extend`] calls.
    pub fn state_for(&self, subset: &[usize]) -> Result<BoundState<T>> {
        subset
            .iter()
            .try_fold(self.empty_state()?, |s, &i| s.extend(&self.atoms[i]))
    }
}

impl Design<f64> {
    /// Atoms for every observation of `problem`, with `I_x` from its prior.
    pub fn from_problem(problem: &Problem) -> Result<Self> {
        let atoms = (0..problem.len()).map(|j| info_atom(problem, j)).collect();
        Self::new(problem.prior.fisher.clone(), atoms)
    }
}

/// Information matrix for a selected set, its Cholesky factor and cached summaries.
#[derive(Clone, Debug)]
pub struct BoundState<T: Scalar> {
    info: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    selected: Vec<usize>,
    summary: Summary,
    baseline: Summary,
}

impl<T: Scalar> BoundState<T> {
    /// `S = ∅`: `F = I_x`.
    pub fn empty(fisher: DMatrix<T>) -> Result<Self> {
        let fisher = linalg::hermitian_part(&fisher);
        let chol = linalg::cholesky(&fisher, "prior fisher information")?;
        let summary = Summary::of(&fisher, &chol);
        Ok(Self {
            info: fisher,
            chol,
            selected: Vec::new(),
            summary,
            baseline: summary,
        })
    }

    /// `F' = F + I_j`. Factor-form atoms update the Cholesky factor by rank-one updates;
    /// dense atoms trigger a refactorization.
    pub fn extend(&self, atom: &InfoAtom<T>) -> Result<Self> {
        if self.selected.contains(&atom.index) {
            return Err(Error::DuplicateIndex(atom.index));
        }
        if atom.dimension() != self.dimension() {
            return Err(Error::Dimension(format!(
                "atom dimension {} vs state dimension {}",
                atom.dimension(),
                self.dimension()
            )));
        }
        let info = &self.info + &atom.matrix;
        let chol = match &atom.factor {
            Some(u) => {
                let mut chol = self.chol.clone();
                for col in u.column_iter() {
                    chol.rank_one_update(&col, 1.0);
                }
                chol
            }
            None => linalg::cholesky(&info, "information matrix")?,
        };
        let summary = Summary::of(&info, &chol);
        if !summary.trace_inv.is_finite() || !summary.logdet.is_finite() {
            return Err(Error::Numerical(format!(
                "information matrix degenerate after adding atom {}",
                atom.index
            )));
        }
        let mut selected = self.selected.clone();
        selected.push(atom.index);
        Ok(Self {
            info,
            chol,
            selected,
            summary,
            baseline: self.baseline,
        })
    }

    pub fn scalarize(&self, criterion: Criterion) -> f64 {
        self.summary.relative_to(&self.baseline, criterion)
    }

    pub fn info(&self) -> &DMatrix<T> {
        &self.info
    }

    pub fn chol(&self) -> &Cholesky<T, Dyn> {
        &self.chol
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    pub fn baseline(&self) -> &Summary {
        &self.baseline
    }

    pub fn dimension(&self) -> usize {
        self.info.nrows()
    }

    /// The Van Trees bound `B_S = F_S⁻¹`.
    pub fn bound_matrix(&self) -> DMatrix<T> {
        linalg::hermitian_part(&self.chol.inverse())
    }

    pub fn contains(&self, j: usize) -> bool {
        self.selected.contains(&j)
    }
}
