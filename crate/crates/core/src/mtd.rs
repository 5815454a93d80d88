//! Convex mixture transition distribution (MTD) model for one target series.
//!
//! Parameters are the reparameterized blocks `Z^j = γ_j P^j` plus an intercept
//! `z0 = γ_0 p^0`, so that
//!
//! ```text
//! p(x_it = a | x_{t-1}) = z0[a] + Σ_j Z^j[a, x_{j,t-1}]
//! ```
//!
//! is linear in the parameters and the negative log-likelihood is convex.
//! Sparsity over parents comes from an L1 (`Σ γ_j`) or group (`Σ ‖Z^j‖_F`)
//! penalty, minimized by projected gradient onto the ε-floored constraint set.

use crate::data::{transition_pairs, CategoricalDataset, GrangerGraph, TransitionModel, TransitionSet};
use crate::error::{Error, Result};
use crate::fit::{FitStatus, PenaltyKind};
use crate::layout::ParamLayout;
use crate::matrix::Matrix;
use crate::projection::{dykstra_project, dykstra_prox_group, MtdConstraintSet, DEFAULT_DYKSTRA_MAX_ITER, DEFAULT_DYKSTRA_TOL};
use crate::scalar::Scalar;

/// Edge threshold on γ used for real-data graphs.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Intercept plus one nonnegative `m_i x m_j` block per parent series.
#[derive(Clone, Debug, PartialEq)]
pub struct MtdParams<T> {
    pub target: usize,
    pub intercept: Vec<T>,
    pub pair_mats: Vec<Matrix<T>>,
}

impl<T: Scalar> MtdParams<T> {
    pub fn new(target: usize, intercept: Vec<T>, pair_mats: Vec<Matrix<T>>) -> Result<Self> {
        let m = intercept.len();
        if m == 0 {
            return Err(Error::Shape("empty intercept".into()));
        }
        if let Some((j, z)) = pair_mats.iter().enumerate().find(|(_, z)| z.rows() != m) {
            return Err(Error::Shape(format!(
                "block {j} has {} rows, target alphabet is {m}",
                z.rows()
            )));
        }
        Ok(Self {
            target,
            intercept,
            pair_mats,
        })
    }

    /// `z0 = 1/m` and every block zero.
    pub fn intercept_only(target: usize, target_alphabet: usize, parent_alphabets: &[usize]) -> Self {
        let p = T::one() / T::from_usize_lossy(target_alphabet);
        Self {
            target,
            intercept: vec![p; target_alphabet],
            pair_mats: parent_alphabets
                .iter()
                .map(|&mj| Matrix::zeros(target_alphabet, mj))
                .collect(),
        }
    }

    pub fn target_alphabet(&self) -> usize {
        self.intercept.len()
    }

    pub fn n_parents(&self) -> usize {
        self.pair_mats.len()
    }

    pub fn layout(&self) -> ParamLayout {
        let parents: Vec<usize> = self.pair_mats.iter().map(Matrix::cols).collect();
        ParamLayout::new(self.target_alphabet(), &parents)
    }

    pub fn to_stacked(&self) -> Vec<T> {
        let mut z = self.intercept.clone();
        for block in &self.pair_mats {
            z.extend_from_slice(block.as_slice());
        }
        z
    }

    pub fn from_stacked(target: usize, layout: &ParamLayout, z: &[T]) -> Self {
        debug_assert_eq!(z.len(), layout.len());
        let m = layout.target_alphabet();
        Self {
            target,
            intercept: z[layout.intercept_range()].to_vec(),
            pair_mats: (0..layout.n_parents())
                .map(|j| {
                    Matrix::from_vec(m, layout.parent_alphabets()[j], z[layout.block_range(j)].to_vec())
                        .expect("layout block size")
                })
                .collect(),
        }
    }

    /// Checks nonnegativity, equal column sums and unit total mass within `tol`.
    pub fn check_feasible(&self, tol: T) -> Result<()> {
        if let Some(x) = self.intercept.iter().find(|x| !(**x >= -tol)) {
            return Err(Error::Infeasible(format!("negative intercept entry {x}")));
        }
        let mut mass: T = self.intercept.iter().copied().sum();
        for (j, z) in self.pair_mats.iter().enumerate() {
            if !(z.min() >= -tol) {
                return Err(Error::Infeasible(format!("negative entry in block {j}")));
            }
            let sums = z.col_sums();
            let gamma = sums[0];
            if sums.iter().any(|&s| (s - gamma).abs() > tol) {
                return Err(Error::Infeasible(format!("block {j} column sums differ: {sums:?}")));
            }
            mass = mass + gamma;
        }
        if (mass - T::one()).abs() > tol {
            return Err(Error::Infeasible(format!("total mass {mass}, expected 1")));
        }
        Ok(())
    }
}

impl<T: Scalar> TransitionModel<T> for MtdParams<T> {
    fn target_alphabet(&self) -> usize {
        self.intercept.len()
    }

    fn cond_prob(&self, context: &[usize]) -> Vec<T> {
        mtd_cond_prob(self, context)
    }
}

/// `p[a] = z0[a] + Σ_j Z^j[a, context_j]`.
pub fn mtd_cond_prob<T: Scalar>(params: &MtdParams<T>, context: &[usize]) -> Vec<T> {
    debug_assert_eq!(context.len(), params.n_parents());
    (0..params.target_alphabet())
        .map(|a| {
            params
                .pair_mats
                .iter()
                .zip(context)
                .fold(params.intercept[a], |acc, (z, &b)| acc + z[(a, b)])
        })
        .collect()
}

/// `−Σ_t log p(x_it | x_{t-1})` over the given transitions.
pub fn mtd_nll<T: Scalar>(params: &MtdParams<T>, transitions: &TransitionSet) -> Result<T> {
    let mut total = T::zero();
    for sample in transitions.iter() {
        let p = params
            .pair_mats
            .iter()
            .zip(sample.context)
            .fold(params.intercept[sample.target], |acc, (z, &b)| acc + z[(sample.target, b)]);
        total = total - p.ln();
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Infeasible(
            "likelihood is not finite: some observed transition has probability ≤ 0".into(),
        ))
    }
}

/// L1: `Σ_j (1/m_j)·1ᵀZ^j1`. Group: `Σ_j ‖Z^j‖_F`. The intercept is never penalized.
pub fn mtd_penalty<T: Scalar>(params: &MtdParams<T>, kind: PenaltyKind) -> T {
    params
        .pair_mats
        .iter()
        .map(|z| match kind {
            PenaltyKind::L1 => z.sum() / T::from_usize_lossy(z.cols()),
            PenaltyKind::GroupLasso => z.frobenius_norm(),
        })
        .sum()
}

/// Gradient of [`mtd_penalty`] with respect to each block (the intercept block is zero).
pub fn mtd_penalty_grad<T: Scalar>(params: &MtdParams<T>, kind: PenaltyKind) -> Result<Vec<Matrix<T>>> {
    params
        .pair_mats
        .iter()
        .enumerate()
        .map(|(j, z)| match kind {
            PenaltyKind::L1 => Ok(Matrix::filled(z.rows(), z.cols(), T::one() / T::from_usize_lossy(z.cols()))),
            PenaltyKind::GroupLasso => {
                let norm = z.frobenius_norm();
                if norm > T::zero() {
                    Ok(z.scale(T::one() / norm))
                } else {
                    Err(Error::ZeroNorm(j))
                }
            }
        })
        .collect()
}

/// Gradient of the penalized negative log-likelihood, shaped like [`MtdParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct MtdGradient<T> {
    pub intercept: Vec<T>,
    pub pair_mats: Vec<Matrix<T>>,
}

/// Gradient of `nll + λ·penalty`.
///
/// Entry `(j, a, b)` is `−Σ_t 1{x_it = a, x_{j,t-1} = b} / p_t + λ ∂Ω/∂Z^j[a,b]`;
/// intercept entry `a` is `−Σ_t 1{x_it = a} / p_t`.
pub fn mtd_grad<T: Scalar>(
    params: &MtdParams<T>,
    transitions: &TransitionSet,
    lambda: T,
    kind: PenaltyKind,
) -> Result<MtdGradient<T>> {
    let layout = params.layout();
    let objective = MtdObjective::new(&layout, transitions, lambda, kind)?;
    let z = params.to_stacked();
    let mut g = vec![T::zero(); z.len()];
    objective.value_and_grad(&z, &mut g)?;
    let stacked = MtdParams::from_stacked(params.target, &layout, &g);
    Ok(MtdGradient {
        intercept: stacked.intercept,
        pair_mats: stacked.pair_mats,
    })
}

/// Moves the minimum of every block row onto the intercept.
///
/// The result has a zero in every row of every `Z^j` and the same conditional
/// probabilities; it is the unique identifiable representative.
pub fn canonicalize_mtd<T: Scalar>(params: &MtdParams<T>) -> MtdParams<T> {
    shift_rows_to_intercept(params, T::zero())
}

/// Like [`canonicalize_mtd`] but leaves each row minimum at `floor` instead of 0.
pub fn canonicalize_to_floor<T: Scalar>(params: &MtdParams<T>, floor: T) -> MtdParams<T> {
    shift_rows_to_intercept(params, floor)
}

fn shift_rows_to_intercept<T: Scalar>(params: &MtdParams<T>, floor: T) -> MtdParams<T> {
    let mut out = params.clone();
    for z in &mut out.pair_mats {
        for a in 0..z.rows() {
            let row = z.row_mut(a);
            let excess = row.iter().copied().fold(T::infinity(), T::min) - floor;
            if excess > T::zero() {
                for x in row.iter_mut() {
                    *x = *x - excess;
                }
                out.intercept[a] = out.intercept[a] + excess;
            }
        }
    }
    out
}

/// `γ_j = (1/m_j)·1ᵀZ^j1`, the probability mass attributed to parent `j`.
pub fn gamma_weights<T: Scalar>(params: &MtdParams<T>) -> Vec<T> {
    params
        .pair_mats
        .iter()
        .map(|z| (z.sum() / T::from_usize_lossy(z.cols())).max(T::zero()))
        .collect()
}

/// Graph with `weights[(i, j)] = γ_j` of the fit for target `i`; edges need `γ > tau`.
pub fn mtd_granger_graph<T: Scalar>(fits: &[MtdParams<T>], tau: T) -> Result<GrangerGraph<T>> {
    let d = fits.len();
    let mut weights = Matrix::zeros(d, d);
    for (i, fit) in fits.iter().enumerate() {
        if fit.target != i || fit.n_parents() != d {
            return Err(Error::Shape(format!(
                "fit {i} targets series {} with {} parents; expected target {i} with {d}",
                fit.target,
                fit.n_parents()
            )));
        }
        weights.row_mut(i).copy_from_slice(&gamma_weights(fit));
    }
    GrangerGraph::from_weights(weights, tau)
}

/// Settings for [`fit_mtd`].
#[derive(Clone, Debug, PartialEq)]
pub struct MtdFitConfig<T> {
    pub lambda: T,
    pub penalty: PenaltyKind,
    /// Floor on every parameter, keeping log and norm terms differentiable.
    pub epsilon: T,
    pub max_iter: usize,
    pub tol_rel_obj: T,
    pub backtrack: T,
    pub armijo: T,
    pub max_backtracks: usize,
    pub dykstra_tol: T,
    pub dykstra_max_iter: usize,
}

impl<T: Scalar> Default for MtdFitConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::zero(),
            penalty: PenaltyKind::GroupLasso,
            epsilon: T::lit(DEFAULT_EPSILON),
            max_iter: 5000,
            tol_rel_obj: T::lit(1e-8),
            backtrack: T::lit(0.5),
            armijo: T::lit(1e-4),
            max_backtracks: 60,
            dykstra_tol: T::lit(DEFAULT_DYKSTRA_TOL),
            dykstra_max_iter: DEFAULT_DYKSTRA_MAX_ITER,
        }
    }
}

impl<T: Scalar> MtdFitConfig<T> {
    pub fn with_lambda(lambda: T, penalty: PenaltyKind) -> Self {
        Self {
            lambda,
            penalty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return bad("lambda must be finite and ≥ 0");
        }
        if !(self.epsilon > T::zero()) {
            return bad("epsilon must be > 0");
        }
        if !(self.tol_rel_obj > T::zero()) || !(self.dykstra_tol > T::zero()) {
            return bad("tolerances must be > 0");
        }
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.armijo > T::zero() && self.armijo < T::one()) {
            return bad("Armijo constant must lie in (0, 1)");
        }
        if self.max_iter == 0 || self.dykstra_max_iter == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MtdFit<T> {
    pub params: MtdParams<T>,
    /// Penalized objective at `params`.
    pub objective: T,
    pub iterations: usize,
    pub status: FitStatus,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<T>,
    /// Projections that hit the Dykstra iteration limit.
    pub unconverged_projections: usize,
}

/// Fits the penalized MTD model for one target series of `data`.
pub fn fit_mtd<T: Scalar>(data: &CategoricalDataset, target: usize, config: &MtdFitConfig<T>) -> Result<MtdFit<T>> {
    if target >= data.n_series() {
        return Err(Error::InvalidConfig(format!(
            "target {target} out of range for {} series",
            data.n_series()
        )));
    }
    fit_mtd_transitions(&transition_pairs(data, target), config, None)
}

/// Default starting point: half the mass on a uniform intercept, the rest spread
/// uniformly over the parent blocks.
pub fn initial_mtd_params<T: Scalar>(target: usize, target_alphabet: usize, parent_alphabets: &[usize]) -> MtdParams<T> {
    let d = parent_alphabets.len();
    if d == 0 {
        return MtdParams::intercept_only(target, target_alphabet, parent_alphabets);
    }
    let half = T::lit(0.5);
    let m = T::from_usize_lossy(target_alphabet);
    let entry = half / (T::from_usize_lossy(d) * m);
    MtdParams {
        target,
        intercept: vec![half / m; target_alphabet],
        pair_mats: parent_alphabets
            .iter()
            .map(|&mj| Matrix::filled(target_alphabet, mj, entry))
            .collect(),
    }
}

/// Fit on an explicit transition set, optionally warm-started.
///
/// With the L1 penalty (linear on the feasible set) or λ = 0 each step
/// projects `z − δ∇f` with Dykstra and backtracks `δ` until
/// `f(candidate) ≤ f(z) − c·∇fᵀ(z − candidate)`.
///
/// With the group penalty the norm has curvature of order `1/ε` next to the
/// floor, which stalls plain projected gradient. The step is then proximal:
/// `z − δ∇nll` is mapped by [`dykstra_prox_group`] and `δ` is backtracked
/// until the quadratic upper bound on the likelihood holds. The group term is
/// measured from the floor, `Σ_j ‖Z^j − ε‖_F`, so its proximal map keeps the
/// floor reachable; this moves the objective by at most `λ·ε·Σ_j √(m_i·m_j)`.
///
/// In both cases the next trial step is twice the last accepted one, every
/// accepted iterate has its row excess over ε moved into the intercept (same
/// probabilities, lower penalty), and accepted objectives are non-increasing.
pub fn fit_mtd_transitions<T: Scalar>(
    transitions: &TransitionSet,
    config: &MtdFitConfig<T>,
    warm_start: Option<&MtdParams<T>>,
) -> Result<MtdFit<T>> {
    config.validate()?;
    if transitions.is_empty() {
        return Err(Error::InvalidConfig("no transitions to fit".into()));
    }
    let target = transitions.target_series();
    let layout = ParamLayout::new(transitions.target_alphabet(), transitions.alphabet_sizes());
    let set = MtdConstraintSet::new(layout.clone(), config.epsilon)?;
    let proximal = config.penalty == PenaltyKind::GroupLasso && config.lambda > T::zero();
    // the part of the objective the gradient step sees
    let smooth_lambda = if proximal { T::zero() } else { config.lambda };
    let smooth = MtdObjective::new(&layout, transitions, smooth_lambda, config.penalty)?.with_group_center(config.epsilon);
    let total = |z: &[T], smooth_value: T| {
        if proximal {
            smooth_value + config.lambda * smooth.penalty(z)
        } else {
            smooth_value
        }
    };

    let start = match warm_start {
        Some(p) => {
            if p.layout() != layout {
                return Err(Error::Shape("warm start does not match the transition layout".into()));
            }
            p.to_stacked()
        }
        None => initial_mtd_params(target, layout.target_alphabet(), layout.parent_alphabets()).to_stacked(),
    };
    let mut unconverged = 0;
    let mut step_map = |x: &[T], step: T| -> Result<Vec<T>> {
        let out = if proximal {
            dykstra_prox_group(x, &set, step * config.lambda, config.dykstra_tol, config.dykstra_max_iter)?
        } else {
            dykstra_project(x, &set, config.dykstra_tol, config.dykstra_max_iter)?
        };
        if !out.converged {
            unconverged += 1;
        }
        Ok(out.point)
    };

    let mut z = step_map(&start, T::zero())?;
    let mut grad = vec![T::zero(); z.len()];
    let mut s = smooth.value_and_grad(&z, &mut grad)?;
    let mut f = total(&z, s);
    let mut trace = vec![f];
    let gmax = grad.iter().fold(T::zero(), |acc, g| acc.max(g.abs()));
    let mut step = if gmax > T::zero() { T::one() / gmax } else { T::one() };
    let mut trial = vec![T::zero(); z.len()];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    'outer: for iter in 1..=config.max_iter {
        iterations = iter;
        let mut backtracks = 0;
        let mut candidate = loop {
            for k in 0..z.len() {
                trial[k] = z[k] - step * grad[k];
            }
            let candidate = step_map(&trial, step)?;
            let s_candidate = smooth.value(&candidate);
            let mut linear = T::zero();
            let mut quad = T::zero();
            for k in 0..z.len() {
                let diff = candidate[k] - z[k];
                linear = linear + grad[k] * diff;
                quad = quad + diff * diff;
            }
            let accept = if proximal {
                s_candidate <= s + linear + quad / (step + step) + T::lit(1e-12) * s.abs().max(T::one())
            } else {
                s_candidate <= s - config.armijo * (-linear).max(T::zero())
            };
            if s_candidate.is_finite() && accept {
                break candidate;
            }
            backtracks += 1;
            if backtracks > config.max_backtracks {
                status = FitStatus::Stalled;
                break 'outer;
            }
            step = step * config.backtrack;
        };
        shift_excess_in_place(&mut candidate, &layout, config.epsilon);
        let mut grad_new = vec![T::zero(); z.len()];
        let s_new = smooth.value_and_grad(&candidate, &mut grad_new)?;
        let f_new = total(&candidate, s_new);
        if f_new > f {
            // only reachable through rounding or an inexact proximal map at the optimum
            status = FitStatus::Converged;
            break;
        }
        let rel = (f - f_new) / f.abs().max(T::one());
        z = candidate;
        grad = grad_new;
        s = s_new;
        f = f_new;
        trace.push(f);
        step = step + step;
        if rel < config.tol_rel_obj {
            status = FitStatus::Converged;
            break;
        }
    }

    // Also covers exits before the per-step shift; lands on the identifiable representative.
    let params = canonicalize_to_floor(&MtdParams::from_stacked(target, &layout, &z), config.epsilon);
    let z = params.to_stacked();
    let f_polished = total(&z, smooth.value(&z));
    if f_polished < f {
        f = f_polished;
        trace.push(f);
    }

    Ok(MtdFit {
        params,
        objective: f,
        iterations,
        status,
        objective_trace: trace,
        unconverged_projections: unconverged,
    })
}

/// Stacked-vector form of [`canonicalize_to_floor`].
fn shift_excess_in_place<T: Scalar>(z: &mut [T], layout: &ParamLayout, floor: T) {
    for j in 0..layout.n_parents() {
        let cols = layout.parent_alphabets()[j];
        for a in 0..layout.target_alphabet() {
            let start = layout.index(j, a, 0);
            let row = &mut z[start..start + cols];
            let excess = row.iter().copied().fold(T::infinity(), T::min) - floor;
            if excess > T::zero() {
                row.iter_mut().for_each(|x| *x = *x - excess);
                z[a] = z[a] + excess;
            }
        }
    }
}

/// Penalized objective over the stacked parameter vector.
///
/// For every sample the `d` stacked indices it reads are precomputed, so an
/// evaluation costs `O((T - 1)·d)`.
pub(crate) struct MtdObjective<T> {
    layout: ParamLayout,
    targets: Vec<usize>,
    lookups: Vec<usize>,
    lambda: T,
    penalty: PenaltyKind,
    /// The group norm is taken of `Z^j − group_center`.
    group_center: T,
}

impl<T: Scalar> MtdObjective<T> {
    pub(crate) fn new(layout: &ParamLayout, transitions: &TransitionSet, lambda: T, penalty: PenaltyKind) -> Result<Self> {
        if transitions.alphabet_sizes() != layout.parent_alphabets()
            || transitions.target_alphabet() != layout.target_alphabet()
        {
            return Err(Error::Shape("parameters do not match the transition alphabets".into()));
        }
        let d = layout.n_parents();
        let mut targets = Vec::with_capacity(transitions.len());
        let mut lookups = Vec::with_capacity(transitions.len() * d);
        for s in transitions.iter() {
            targets.push(s.target);
            lookups.extend(s.context.iter().enumerate().map(|(j, &b)| layout.index(j, s.target, b)));
        }
        Ok(Self {
            layout: layout.clone(),
            targets,
            lookups,
            lambda,
            penalty,
            group_center: T::zero(),
        })
    }

    pub(crate) fn with_group_center(mut self, center: T) -> Self {
        self.group_center = center;
        self
    }

    fn group_norm(&self, block: &[T]) -> T {
        let c = self.group_center;
        block.iter().map(|&x| (x - c) * (x - c)).sum::<T>().sqrt()
    }

    #[inline]
    fn prob(&self, z: &[T], t: usize) -> T {
        let d = self.layout.n_parents();
        self.lookups[t * d..(t + 1) * d]
            .iter()
            .fold(z[self.targets[t]], |acc, &k| acc + z[k])
    }

    pub(crate) fn nll(&self, z: &[T]) -> T {
        let mut total = T::zero();
        for t in 0..self.targets.len() {
            let p = self.prob(z, t);
            if !(p > T::zero()) {
                return T::infinity();
            }
            total = total - p.ln();
        }
        total
    }

    pub(crate) fn penalty(&self, z: &[T]) -> T {
        (0..self.layout.n_parents())
            .map(|j| {
                let block = &z[self.layout.block_range(j)];
                match self.penalty {
                    PenaltyKind::L1 => {
                        block.iter().copied().sum::<T>() / T::from_usize_lossy(self.layout.parent_alphabets()[j])
                    }
                    PenaltyKind::GroupLasso => self.group_norm(block),
                }
            })
            .sum()
    }

    pub(crate) fn value(&self, z: &[T]) -> T {
        self.nll(z) + self.lambda * self.penalty(z)
    }

    pub(crate) fn value_and_grad(&self, z: &[T], grad: &mut [T]) -> Result<T> {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let d = self.layout.n_parents();
        let mut nll = T::zero();
        for t in 0..self.targets.len() {
            let p = self.prob(z, t);
            if !(p > T::zero()) {
                return Err(Error::Infeasible(format!("transition {t} has probability {p}")));
            }
            nll = nll - p.ln();
            let w = T::one() / p;
            grad[self.targets[t]] = grad[self.targets[t]] - w;
            for &k in &self.lookups[t * d..(t + 1) * d] {
                grad[k] = grad[k] - w;
            }
        }
        let mut penalty = T::zero();
        for j in 0..d {
            let range = self.layout.block_range(j);
            match self.penalty {
                PenaltyKind::L1 => {
                    let scale = T::one() / T::from_usize_lossy(self.layout.parent_alphabets()[j]);
                    penalty = penalty + z[range.clone()].iter().copied().sum::<T>() * scale;
                    for g in &mut grad[range] {
                        *g = *g + self.lambda * scale;
                    }
                }
                PenaltyKind::GroupLasso => {
                    let norm = self.group_norm(&z[range.clone()]);
                    penalty = penalty + norm;
                    if self.lambda > T::zero() {
                        if !(norm > T::zero()) {
                            return Err(Error::ZeroNorm(j));
                        }
                        for k in range {
                            grad[k] = grad[k] + self.lambda * (z[k] - self.group_center) / norm;
                        }
                    }
                }
            }
        }
        Ok(nll + self.lambda * penalty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::random_mtd_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: Vec<Vec<usize>>, sizes: &[usize]) -> CategoricalDataset {
        CategoricalDataset::new(&rows, Some(sizes)).unwrap()
    }

    #[test]
    fn intercept_only_is_uniform() {
        let p = MtdParams::<f64>::intercept_only(0, 4, &[3, 2]);
        for q in mtd_cond_prob(&p, &[2, 1]) {
            assert!((q - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_table_read_off() {
        let z = Matrix::<f64>::from_rows(&[vec![0.7, 0.2], vec![0.3, 0.8]]).unwrap();
        let p = MtdParams::<f64>::new(0, vec![0.0, 0.0], vec![z]).unwrap();
        let q = mtd_cond_prob(&p, &[0]);
        assert!((q[0] - 0.7).abs() < 1e-15 && (q[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn random_feasible_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = rng.random_range(1..5);
            let m = rng.random_range(2..5);
            let parents: Vec<usize> = (0..d).map(|_| rng.random_range(2..5)).collect();
            let p = random_mtd_params::<f64, _>(&mut rng, 0, m, &parents, 1e-8);
            p.check_feasible(1e-9).unwrap();
            let ctx: Vec<usize> = parents.iter().map(|&mj| rng.random_range(0..mj)).collect();
            let q = mtd_cond_prob(&p, &ctx);
            assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(q.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn uniform_nll() {
        let rows: Vec<Vec<usize>> = (0..11).map(|t| vec![t % 4, (t * 7) % 3]).collect();
        let data = dataset(rows, &[4, 3]);
        let p = MtdParams::<f64>::intercept_only(0, 4, &[4, 3]);
        let nll = mtd_nll(&p, &transition_pairs(&data, 0)).unwrap();
        assert!((nll - 10.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_direct_sum() {
        let e = 0.05;
        let z = Matrix::<f64>::from_rows(&[vec![1.0 - e, e], vec![e, 1.0 - e]]).unwrap();
        let p = MtdParams::<f64>::new(0, vec![0.0, 0.0], vec![z]).unwrap();
        let data = dataset(vec![vec![0], vec![0], vec![1], vec![1], vec![1], vec![0]], &[2]);
        // transitions 0->0, 0->1, 1->1, 1->1, 1->0
        let direct = -(3.0 * (1.0 - e as f64).ln() + 2.0 * (e as f64).ln());
        let nll = mtd_nll(&p, &transition_pairs(&data, 0)).unwrap();
        assert!((nll - direct).abs() < 1e-12);
    }

    #[test]
    fn nll_infeasible_errors() {
        let z = Matrix::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = MtdParams::<f64>::new(0, vec![0.0, 0.0], vec![z]).unwrap();
        let data = dataset(vec![vec![0], vec![1]], &[2]);
        assert!(matches!(mtd_nll(&p, &transition_pairs(&data, 0)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn canonicalize_example_row() {
        let z = Matrix::<f64>::from_rows(&[vec![0.3, 0.2, 0.4], vec![0.0, 0.1, 0.0]]).unwrap();
        let p = MtdParams::<f64>::new(0, vec![0.05, 0.0], vec![z]).unwrap();
        let c = canonicalize_mtd(&p);
        let want = [0.1, 0.0, 0.2];
        for (a, b) in c.pair_mats[0].row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((c.intercept[0] - 0.25).abs() < 1e-15);
        assert_eq!(canonicalize_mtd(&c), c);
    }

    #[test]
    fn canonicalize_preserves_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let parents = [3, 2, 4];
            let p = random_mtd_params::<f64, _>(&mut rng, 0, 3, &parents, 1e-8);
            let c = canonicalize_mtd(&p);
            for z in &c.pair_mats {
                for a in 0..z.rows() {
                    assert!(z.row(a).iter().copied().fold(f64::INFINITY, f64::min).abs() <= 1e-12);
                }
            }
            for _ in 0..100 {
                let ctx: Vec<usize> = parents.iter().map(|&m| rng.random_range(0..m)).collect();
                let (a, b) = (mtd_cond_prob(&p, &ctx), mtd_cond_prob(&c, &ctx));
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10));
            }
        }
    }

    #[test]
    fn gamma_closed_forms() {
        let p = MtdParams::<f64>::new(
            0,
            vec![0.2; 4],
            vec![Matrix::filled(4, 4, 0.05), Matrix::zeros(4, 4)],
        )
        .unwrap();
        let g = gamma_weights(&p);
        assert!((g[0] - 0.2).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn gamma_accounts_for_all_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_mtd_params::<f64, _>(&mut rng, 0, 4, &[2, 3, 4, 5], 1e-8);
            let total = p.intercept.iter().sum::<f64>() + gamma_weights(&p).iter().sum::<f64>();
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn penalty_closed_forms() {
        let d = 3;
        let p = MtdParams::<f64>::new(0, vec![0.1; 4], vec![Matrix::filled(4, 4, 0.05); d]).unwrap();
        assert!((mtd_penalty(&p, PenaltyKind::L1) - 0.2 * d as f64).abs() < 1e-14);
        let c = 0.05;
        assert!((mtd_penalty(&p, PenaltyKind::GroupLasso) - d as f64 * c * 4.0).abs() < 1e-14);
    }

    #[test]
    fn group_gradient_rejects_zero_block() {
        let p = MtdParams::<f64>::intercept_only(0, 2, &[2]);
        assert!(matches!(mtd_penalty_grad(&p, PenaltyKind::GroupLasso), Err(Error::ZeroNorm(0))));
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
        let mut x = z.to_vec();
        (0..z.len())
            .map(|k| {
                x[k] = z[k] + h;
                let up = f(&x);
                x[k] = z[k] - h;
                let down = f(&x);
                x[k] = z[k];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [PenaltyKind::L1, PenaltyKind::GroupLasso] {
            let p = random_mtd_params::<f64, _>(&mut rng, 0, 3, &[3, 2], 1e-8);
            let layout = p.layout();
            let analytic: Vec<f64> = std::iter::repeat_n(0.0, 3)
                .chain(mtd_penalty_grad(&p, kind).unwrap().into_iter().flat_map(Matrix::into_vec))
                .collect();
            let f = |z: &[f64]| mtd_penalty(&MtdParams::from_stacked(0, &layout, z), kind);
            let fd = central_difference(f, &p.to_stacked(), 1e-6);
            assert!(rel_err(&analytic, &fd) <= 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<usize>> = (0..60)
            .map(|_| vec![rng.random_range(0..3), rng.random_range(0..2), rng.random_range(0..4)])
            .collect();
        let data = dataset(rows, &[3, 2, 4]);
        for (lambda, kind) in [(0.0, PenaltyKind::L1), (2.5, PenaltyKind::GroupLasso), (1.5, PenaltyKind::L1)] {
            for target in 0..3 {
                let trans = transition_pairs(&data, target);
                let m = data.alphabet_size(target);
                let p = random_mtd_params::<f64, _>(&mut rng, target, m, &[3, 2, 4], 1e-8);
                let layout = p.layout();
                let g = mtd_grad(&p, &trans, lambda, kind).unwrap();
                let analytic = MtdParams { target, intercept: g.intercept, pair_mats: g.pair_mats }.to_stacked();
                let f = |z: &[f64]| {
                    let q = MtdParams::from_stacked(target, &layout, z);
                    mtd_nll(&q, &trans).unwrap() + lambda * mtd_penalty(&q, kind)
                };
                let fd = central_difference(f, &p.to_stacked(), 1e-7);
                assert!(rel_err(&analytic, &fd) <= 1e-5, "{}", rel_err(&analytic, &fd));
            }
        }
    }

    #[test]
    fn gradient_zero_without_overlap() {
        // target series 0 never takes value 1 after parent value 1
        let data = dataset(vec![vec![0, 0], vec![0, 1], vec![0, 0], vec![0, 1]], &[2, 2]);
        let p = initial_mtd_params::<f64>(0, 2, &[2, 2]);
        let g = mtd_grad(&p, &transition_pairs(&data, 0), 0.0, PenaltyKind::L1).unwrap();
        assert_eq!(g.pair_mats[1][(1, 1)], 0.0);
        assert_eq!(g.intercept[1], 0.0);
    }

    #[test]
    fn granger_noncausal_when_columns_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = random_mtd_params::<f64, _>(&mut rng, 0, 3, &[3, 3], 1e-8);
        // make every column of Z^1 equal to its first column
        let first: Vec<f64> = (0..3).map(|a| p.pair_mats[1][(a, 0)]).collect();
        for a in 0..3 {
            for b in 0..3 {
                p.pair_mats[1][(a, b)] = first[a];
            }
        }
        for c0 in 0..3 {
            let base = mtd_cond_prob(&p, &[c0, 0]);
            for c1 in 1..3 {
                let other = mtd_cond_prob(&p, &[c0, c1]);
                assert!(base.iter().zip(&other).all(|(x, y)| (x - y).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn objective_midpoint_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<usize>> = (0..80).map(|_| vec![rng.random_range(0..3), rng.random_range(0..3)]).collect();
        let data = dataset(rows, &[3, 3]);
        let trans = transition_pairs(&data, 1);
        for kind in [PenaltyKind::L1, PenaltyKind::GroupLasso] {
            let f = |p: &MtdParams<f64>| mtd_nll(p, &trans).unwrap() + 3.0 * mtd_penalty(p, kind);
            for _ in 0..20 {
                let a = random_mtd_params::<f64, _>(&mut rng, 1, 3, &[3, 3], 1e-8);
                let b = random_mtd_params::<f64, _>(&mut rng, 1, 3, &[3, 3], 1e-8);
                let mid: Vec<f64> = a.to_stacked().iter().zip(b.to_stacked()).map(|(x, y)| 0.5 * (x + y)).collect();
                let mid = MtdParams::from_stacked(1, &a.layout(), &mid);
                assert!(f(&mid) <= 0.5 * f(&a) + 0.5 * f(&b) + 1e-9);
            }
        }
    }

    #[test]
    fn huge_lambda_pushes_mass_to_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rows: Vec<Vec<usize>> = (0..200).map(|_| vec![rng.random_range(0..3), rng.random_range(0..2)]).collect();
        let data = dataset(rows, &[3, 2]);
        for kind in [PenaltyKind::L1, PenaltyKind::GroupLasso] {
            let config = MtdFitConfig::<f64>::with_lambda(1e5, kind);
            let fit = fit_mtd(&data, 0, &config).unwrap();
            let eps = config.epsilon;
            for (j, g) in gamma_weights(&fit.params).iter().enumerate() {
                let mj = data.alphabet_size(j) as f64;
                assert!(*g <= eps * mj * 3.0 + 1e-8, "gamma {g}");
            }
            assert!(mtd_granger_graph(&[fit.params.clone(), fit_mtd(&data, 1, &config).unwrap().params], 0.01)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn unpenalized_fit_recovers_transition_frequencies() {
        let table = [[0.8, 0.3], [0.2, 0.7]];
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut x = 0usize;
        let mut rows = vec![vec![x]];
        for _ in 1..5000 {
            x = if rng.random::<f64>() < table[0][x] { 0 } else { 1 };
            rows.push(vec![x]);
        }
        let data = dataset(rows, &[2]);
        let fit = fit_mtd(&data, 0, &MtdFitConfig::<f64>::with_lambda(0.0, PenaltyKind::L1)).unwrap();
        let trans = transition_pairs(&data, 0);
        let mut counts = [[0.0; 2]; 2];
        for s in trans.iter() {
            counts[s.context[0]][s.target] += 1.0;
        }
        for b in 0..2 {
            let total = counts[b][0] + counts[b][1];
            let q = mtd_cond_prob(&fit.params, &[b]);
            for a in 0..2 {
                assert!((q[a] - counts[b][a] / total).abs() <= 0.05, "{q:?}");
            }
        }
    }

    #[test]
    fn accepted_steps_never_increase_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let rows: Vec<Vec<usize>> = (0..150)
            .map(|_| vec![rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..2)])
            .collect();
        let data = dataset(rows, &[3, 3, 2]);
        let fit = fit_mtd(&data, 2, &MtdFitConfig::<f64>::with_lambda(2.0, PenaltyKind::GroupLasso)).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        fit.params.check_feasible(1e-8).unwrap();
        assert!((fit.objective - fit.objective_trace.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn penalized_fit_is_identifiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<usize>> = (0..300)
            .map(|_| vec![rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..3)])
            .collect();
        let data = dataset(rows, &[3, 3, 3]);
        for kind in [PenaltyKind::L1, PenaltyKind::GroupLasso] {
            let config = MtdFitConfig::<f64>::with_lambda(1.0, kind);
            let fit = fit_mtd(&data, 0, &config).unwrap();
            for z in &fit.params.pair_mats {
                for a in 0..z.rows() {
                    let min = z.row(a).iter().copied().fold(f64::INFINITY, f64::min);
                    assert!(min <= config.epsilon + 1e-6, "{kind:?}: row min {min}, status {:?}", fit.status);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = MtdFitConfig::<f64>::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = MtdFitConfig::<f64>::default();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn runs_in_single_precision() {
        let rows: Vec<Vec<usize>> = (0..40).map(|t| vec![t % 2, (t / 3) % 3]).collect();
        let data = dataset(rows, &[2, 3]);
        let fit = fit_mtd::<f32>(&data, 0, &MtdFitConfig::with_lambda(1.0, PenaltyKind::L1)).unwrap();
        fit.params.check_feasible(1e-4).unwrap();
    }
}
