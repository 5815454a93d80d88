//! Multinomial logistic transition distribution (mLTD) model for one target series.
//!
//! `p(x_it = a | x_{t-1}) ∝ exp(z0[a] + Σ_j Z^j[a, x_{j,t-1}])` with the
//! identifiable zero pattern: the first column and last row of every `Z^j`
//! and the last intercept entry are fixed at zero. Those entries are masked
//! out of every update, so the pattern holds exactly at every iterate.

use crate::data::{transition_pairs, CategoricalDataset, GrangerGraph, TransitionModel, TransitionSet};
use crate::error::{Error, Result};
use crate::fit::FitStatus;
use crate::layout::ParamLayout;
use crate::matrix::Matrix;
use crate::scalar::{sum_sq, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct MltdParams<T> {
    pub target: usize,
    pub intercept: Vec<T>,
    pub pair_mats: Vec<Matrix<T>>,
}

impl<T: Scalar> MltdParams<T> {
    pub fn zeros(target: usize, target_alphabet: usize, parent_alphabets: &[usize]) -> Self {
        Self {
            target,
            intercept: vec![T::zero(); target_alphabet],
            pair_mats: parent_alphabets
                .iter()
                .map(|&mj| Matrix::zeros(target_alphabet, mj))
                .collect(),
        }
    }

    /// Builds parameters and zeroes the constrained entries.
    pub fn new_identifiable(target: usize, intercept: Vec<T>, pair_mats: Vec<Matrix<T>>) -> Result<Self> {
        let m = intercept.len();
        if m < 2 {
            return Err(Error::Shape("target alphabet must have at least 2 categories".into()));
        }
        if let Some((j, _)) = pair_mats.iter().enumerate().find(|(_, z)| z.rows() != m) {
            return Err(Error::Shape(format!("block {j} row count differs from the target alphabet")));
        }
        let mut p = Self {
            target,
            intercept,
            pair_mats,
        };
        p.apply_zero_pattern();
        Ok(p)
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

    fn apply_zero_pattern(&mut self) {
        let m = self.target_alphabet();
        self.intercept[m - 1] = T::zero();
        for z in &mut self.pair_mats {
            for a in 0..m {
                z[(a, 0)] = T::zero();
            }
            z.row_mut(m - 1).iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Whether every constrained entry is exactly zero.
    pub fn is_identifiable(&self) -> bool {
        let m = self.target_alphabet();
        self.intercept[m - 1] == T::zero()
            && self.pair_mats.iter().all(|z| {
                (0..m).all(|a| z[(a, 0)] == T::zero()) && z.row(m - 1).iter().all(|&x| x == T::zero())
            })
    }
}

impl<T: Scalar> TransitionModel<T> for MltdParams<T> {
    fn target_alphabet(&self) -> usize {
        self.intercept.len()
    }

    fn cond_prob(&self, context: &[usize]) -> Vec<T> {
        mltd_cond_prob(self, context)
    }
}

/// Which stacked entries are free (not fixed at zero by the identifiability pattern).
pub fn free_mask(layout: &ParamLayout) -> Vec<bool> {
    let m = layout.target_alphabet();
    let mut mask = vec![true; layout.len()];
    mask[m - 1] = false;
    for j in 0..layout.n_parents() {
        for a in 0..m {
            for b in 0..layout.parent_alphabets()[j] {
                if b == 0 || a == m - 1 {
                    mask[layout.index(j, a, b)] = false;
                }
            }
        }
    }
    mask
}

pub fn mltd_logits<T: Scalar>(params: &MltdParams<T>, context: &[usize]) -> Vec<T> {
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

/// Softmax of the logits, computed after subtracting the largest logit.
pub fn mltd_cond_prob<T: Scalar>(params: &MltdParams<T>, context: &[usize]) -> Vec<T> {
    softmax(&mltd_logits(params, context))
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln()
}

/// `Σ_t [logsumexp(logits_t) − logits_t[x_it]]`.
pub fn mltd_nll<T: Scalar>(params: &MltdParams<T>, transitions: &TransitionSet) -> T {
    transitions
        .iter()
        .map(|s| {
            let logits = mltd_logits(params, s.context);
            log_sum_exp(&logits) - logits[s.target]
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MltdGradient<T> {
    pub intercept: Vec<T>,
    pub pair_mats: Vec<Matrix<T>>,
}

/// Gradient of [`mltd_nll`] with the constrained entries set to zero.
pub fn mltd_grad<T: Scalar>(params: &MltdParams<T>, transitions: &TransitionSet) -> Result<MltdGradient<T>> {
    let layout = params.layout();
    let objective = MltdObjective::new(&layout, transitions)?;
    let mut g = vec![T::zero(); layout.len()];
    objective.value_and_grad(&params.to_stacked(), &mut g);
    let p = MltdParams::from_stacked(params.target, &layout, &g);
    Ok(MltdGradient {
        intercept: p.intercept,
        pair_mats: p.pair_mats,
    })
}

/// Proximal operator of `t‖·‖_F`: zero inside the ball of radius `t`, otherwise
/// shrinks `Z` towards the origin by `t`.
pub fn group_soft_threshold<T: Scalar>(z: &Matrix<T>, t: T) -> Matrix<T> {
    let mut out = z.clone();
    soft_threshold_in_place(out.as_mut_slice(), t);
    out
}

fn soft_threshold_in_place<T: Scalar>(block: &mut [T], t: T) {
    let norm = sum_sq(block).sqrt();
    if norm <= t {
        block.iter_mut().for_each(|x| *x = T::zero());
    } else {
        let scale = T::one() - t / norm;
        block.iter_mut().for_each(|x| *x = *x * scale);
    }
}

/// `‖Z^j‖_F / √(m_i·m_j)` for every parent.
pub fn mltd_block_weights<T: Scalar>(params: &MltdParams<T>) -> Vec<T> {
    params
        .pair_mats
        .iter()
        .map(|z| z.frobenius_norm() / T::from_usize_lossy(z.rows() * z.cols()).sqrt())
        .collect()
}

/// Graph with `weights[(i, j)] = ‖Z^j‖_F / √(m_i·m_j)` from the fit for target `i`.
pub fn mltd_granger_graph<T: Scalar>(fits: &[MltdParams<T>], tau: T) -> Result<GrangerGraph<T>> {
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
        weights.row_mut(i).copy_from_slice(&mltd_block_weights(fit));
    }
    GrangerGraph::from_weights(weights, tau)
}

/// Smallest λ at which every block is zero at the optimum.
///
/// With all blocks at zero the intercept optimum reproduces the empirical
/// target frequencies `p̂`, and the block gradient there is
/// `∂nll/∂Z^j[a, b] = p̂_a·n_b − n_ab`. Zero is optimal for block `j` exactly
/// when the masked Frobenius norm of that gradient is at most λ.
pub fn mltd_lambda_max<T: Scalar>(transitions: &TransitionSet) -> T {
    let m = transitions.target_alphabet();
    let n = T::from_usize_lossy(transitions.len());
    let freq: Vec<T> = transitions
        .target_counts()
        .into_iter()
        .map(|c| T::from_usize_lossy(c) / n)
        .collect();
    let mut best = T::zero();
    for (j, &mj) in transitions.alphabet_sizes().iter().enumerate() {
        let mut joint = vec![0usize; m * mj];
        let mut parent = vec![0usize; mj];
        for s in transitions.iter() {
            joint[s.target * mj + s.context[j]] += 1;
            parent[s.context[j]] += 1;
        }
        let mut sq = T::zero();
        for a in 0..m - 1 {
            for b in 1..mj {
                let g = freq[a] * T::from_usize_lossy(parent[b]) - T::from_usize_lossy(joint[a * mj + b]);
                sq = sq + g * g;
            }
        }
        best = best.max(sq.sqrt());
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct MltdFitConfig<T> {
    pub lambda: T,
    pub max_iter: usize,
    pub tol_rel_obj: T,
    pub backtrack: T,
    pub max_backtracks: usize,
}

impl<T: Scalar> Default for MltdFitConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::zero(),
            max_iter: 5000,
            tol_rel_obj: T::lit(1e-8),
            backtrack: T::lit(0.5),
            max_backtracks: 60,
        }
    }
}

impl<T: Scalar> MltdFitConfig<T> {
    pub fn with_lambda(lambda: T) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be finite and ≥ 0".into()));
        }
        if !(self.tol_rel_obj > T::zero()) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return Err(Error::InvalidConfig("backtrack factor must lie in (0, 1)".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MltdFit<T> {
    pub params: MltdParams<T>,
    /// `nll + λ Σ_j ‖Z^j‖_F` at `params`.
    pub objective: T,
    pub iterations: usize,
    pub status: FitStatus,
    pub objective_trace: Vec<T>,
}

pub fn fit_mltd<T: Scalar>(data: &CategoricalDataset, target: usize, config: &MltdFitConfig<T>) -> Result<MltdFit<T>> {
    if target >= data.n_series() {
        return Err(Error::InvalidConfig(format!(
            "target {target} out of range for {} series",
            data.n_series()
        )));
    }
    fit_mltd_transitions(&transition_pairs(data, target), config, None)
}

/// Proximal gradient on `nll + λ Σ_j ‖Z^j‖_F`.
///
/// A masked gradient step on the likelihood is followed by group
/// soft-thresholding of every block. The step is backtracked until the
/// quadratic upper bound on the likelihood holds at the candidate, which
/// makes the penalized objective non-increasing.
pub fn fit_mltd_transitions<T: Scalar>(
    transitions: &TransitionSet,
    config: &MltdFitConfig<T>,
    warm_start: Option<&MltdParams<T>>,
) -> Result<MltdFit<T>> {
    config.validate()?;
    if transitions.is_empty() {
        return Err(Error::InvalidConfig("no transitions to fit".into()));
    }
    let target = transitions.target_series();
    let layout = ParamLayout::new(transitions.target_alphabet(), transitions.alphabet_sizes());
    let objective = MltdObjective::new(&layout, transitions)?;
    let mut x = match warm_start {
        Some(p) => {
            if p.layout() != layout {
                return Err(Error::Shape("warm start does not match the transition layout".into()));
            }
            let mut p = p.clone();
            p.apply_zero_pattern();
            p.to_stacked()
        }
        None => vec![T::zero(); layout.len()],
    };
    let penalty = |z: &[T]| -> T {
        (0..layout.n_parents())
            .map(|j| sum_sq(&z[layout.block_range(j)]).sqrt())
            .sum()
    };

    let mut grad = vec![T::zero(); x.len()];
    let mut smooth = objective.value_and_grad(&x, &mut grad);
    let mut f = smooth + config.lambda * penalty(&x);
    let mut trace = vec![f];
    let mut step = T::one() / T::from_usize_lossy(transitions.len()).max(T::one());
    let mut candidate = vec![T::zero(); x.len()];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    'outer: for iter in 1..=config.max_iter {
        iterations = iter;
        let mut backtracks = 0;
        let smooth_new = loop {
            for k in 0..x.len() {
                candidate[k] = x[k] - step * grad[k];
            }
            for j in 0..layout.n_parents() {
                soft_threshold_in_place(&mut candidate[layout.block_range(j)], step * config.lambda);
            }
            let s = objective.value(&candidate);
            let mut linear = T::zero();
            let mut quad = T::zero();
            for k in 0..x.len() {
                let diff = candidate[k] - x[k];
                linear = linear + grad[k] * diff;
                quad = quad + diff * diff;
            }
            let bound = smooth + linear + quad / (step + step);
            if s.is_finite() && s <= bound + T::lit(1e-12) * smooth.abs().max(T::one()) {
                break s;
            }
            backtracks += 1;
            if backtracks > config.max_backtracks {
                status = FitStatus::Stalled;
                break 'outer;
            }
            step = step * config.backtrack;
        };
        let f_new = smooth_new + config.lambda * penalty(&candidate);
        if f_new > f {
            // only reachable through rounding at the optimum
            status = FitStatus::Converged;
            break;
        }
        let rel = (f - f_new) / f.abs().max(T::one());
        std::mem::swap(&mut x, &mut candidate);
        smooth = objective.value_and_grad(&x, &mut grad);
        f = smooth + config.lambda * penalty(&x);
        trace.push(f);
        step = step + step;
        if rel < config.tol_rel_obj {
            status = FitStatus::Converged;
            break;
        }
    }

    Ok(MltdFit {
        params: MltdParams::from_stacked(target, &layout, &x),
        objective: f,
        iterations,
        status,
        objective_trace: trace,
    })
}

/// Smooth part of the mLTD objective over the stacked vector.
struct MltdObjective {
    layout: ParamLayout,
    targets: Vec<usize>,
    /// For sample `t` and parent `j`: offset of `Z^j` plus the column `x_{j,t-1}`.
    column_base: Vec<usize>,
    mask: Vec<bool>,
}

impl MltdObjective {
    fn new(layout: &ParamLayout, transitions: &TransitionSet) -> Result<Self> {
        if transitions.alphabet_sizes() != layout.parent_alphabets()
            || transitions.target_alphabet() != layout.target_alphabet()
        {
            return Err(Error::Shape("parameters do not match the transition alphabets".into()));
        }
        let d = layout.n_parents();
        let mut targets = Vec::with_capacity(transitions.len());
        let mut column_base = Vec::with_capacity(transitions.len() * d);
        for s in transitions.iter() {
            targets.push(s.target);
            column_base.extend(s.context.iter().enumerate().map(|(j, &b)| layout.index(j, 0, b)));
        }
        Ok(Self {
            layout: layout.clone(),
            targets,
            column_base,
            mask: free_mask(layout),
        })
    }

    fn logits<T: Scalar>(&self, z: &[T], t: usize, out: &mut [T]) {
        let d = self.layout.n_parents();
        let bases = &self.column_base[t * d..(t + 1) * d];
        for (a, o) in out.iter_mut().enumerate() {
            let mut v = z[a];
            for (j, &base) in bases.iter().enumerate() {
                v = v + z[base + a * self.layout.parent_alphabets()[j]];
            }
            *o = v;
        }
    }

    fn value<T: Scalar>(&self, z: &[T]) -> T {
        let mut logits = vec![T::zero(); self.layout.target_alphabet()];
        let mut total = T::zero();
        for t in 0..self.targets.len() {
            self.logits(z, t, &mut logits);
            total = total + log_sum_exp(&logits) - logits[self.targets[t]];
        }
        total
    }

    fn value_and_grad<T: Scalar>(&self, z: &[T], grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let m = self.layout.target_alphabet();
        let d = self.layout.n_parents();
        let mut logits = vec![T::zero(); m];
        let mut total = T::zero();
        for t in 0..self.targets.len() {
            self.logits(z, t, &mut logits);
            let target = self.targets[t];
            total = total + log_sum_exp(&logits) - logits[target];
            let probs = softmax(&logits);
            let bases = &self.column_base[t * d..(t + 1) * d];
            for (a, &p) in probs.iter().enumerate() {
                let r = if a == target { p - T::one() } else { p };
                grad[a] = grad[a] + r;
                for (j, &base) in bases.iter().enumerate() {
                    let k = base + a * self.layout.parent_alphabets()[j];
                    grad[k] = grad[k] + r;
                }
            }
        }
        for (g, &free) in grad.iter_mut().zip(&self.mask) {
            if !free {
                *g = T::zero();
            }
        }
        total
    }
}
