//! Regularization paths, ROC/AUC scoring of recovered graphs, blocked
//! cross-validation and the synthetic experiment driver.

use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{transition_pairs, CategoricalDataset, GrangerGraph, TransitionSet};
use crate::error::{Error, Result};
use crate::fit::{FitStatus, ModelKind, PenaltyKind};
use crate::matrix::Matrix;
use crate::mltd::{fit_mltd_transitions, mltd_block_weights, mltd_lambda_max, mltd_nll, MltdFitConfig, MltdParams};
use crate::mtd::{canonicalize_mtd, fit_mtd_transitions, gamma_weights, mtd_nll, MtdFitConfig, MtdParams};
use crate::scalar::Scalar;
use crate::simulate::{simulate, Regime, SimSpec};

pub const DEFAULT_N_LAMBDAS: usize = 20;
/// `λ_min / λ_max` of the automatic grid.
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-3;
/// The automatic grid starts this factor above the computed `λ_max`.
pub const LAMBDA_MAX_MARGIN: f64 = 1.01;
/// Weights at or below this value count as absent edges when scoring a path.
pub const SUPPORT_CUTOFF: f64 = 1e-6;

/// Solver settings shared by every cell of a path; the `lambda` fields are overwritten.
#[derive(Clone, Debug, PartialEq)]
pub struct PathConfig<T> {
    pub mtd: MtdFitConfig<T>,
    pub mltd: MltdFitConfig<T>,
    /// Start each λ from the previous solution instead of the default point.
    pub warm_start: bool,
}

impl<T: Scalar> Default for PathConfig<T> {
    fn default() -> Self {
        Self {
            mtd: MtdFitConfig::default(),
            mltd: MltdFitConfig::default(),
            warm_start: true,
        }
    }
}

/// A fitted conditional model of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedModel<T> {
    Mtd(MtdParams<T>),
    Mltd(MltdParams<T>),
}

impl<T: Scalar> FittedModel<T> {
    /// Edge weights into this target: canonical `γ_j` for MTD, normalized block norms for mLTD.
    pub fn weights(&self) -> Vec<T> {
        match self {
            FittedModel::Mtd(p) => gamma_weights(&canonicalize_mtd(p)),
            FittedModel::Mltd(p) => mltd_block_weights(p),
        }
    }

    pub fn nll(&self, transitions: &TransitionSet) -> Result<T> {
        match self {
            FittedModel::Mtd(p) => mtd_nll(p, transitions),
            FittedModel::Mltd(p) => Ok(mltd_nll(p, transitions)),
        }
    }
}

/// Result of one target at one λ.
#[derive(Clone, Debug)]
pub struct CellFit<T> {
    pub model: FittedModel<T>,
    pub objective: T,
    pub status: FitStatus,
}

/// `λ_max` for one MTD target.
///
/// At the intercept-only point `z0 = p̂` (empirical target frequencies), moving
/// unit mass from the intercept into block `j` changes the likelihood by at
/// least `n − Σ_b max_a n_ab / p̂_a =: −g_j`. The L1 penalty charges exactly λ
/// per unit, so blocks stay empty for `λ ≥ max_j g_j`. A unit of mass in `Z^j`
/// has Frobenius norm at least `√(m_j / m_i)`, so `g_j·√(m_i / m_j)` bounds the
/// group threshold.
pub fn mtd_lambda_max<T: Scalar>(transitions: &TransitionSet, penalty: PenaltyKind) -> T {
    let m = transitions.target_alphabet();
    let n = transitions.len() as f64;
    if n == 0.0 {
        return T::zero();
    }
    let freq: Vec<f64> = transitions.target_counts().into_iter().map(|c| c as f64 / n).collect();
    let mut best = 0.0f64;
    for (j, &mj) in transitions.alphabet_sizes().iter().enumerate() {
        let mut joint = vec![0usize; m * mj];
        for s in transitions.iter() {
            joint[s.target * mj + s.context[j]] += 1;
        }
        let mut g = -n;
        for b in 0..mj {
            g += (0..m)
                .filter(|&a| freq[a] > 0.0)
                .map(|a| joint[a * mj + b] as f64 / freq[a])
                .fold(0.0, f64::max);
        }
        let g = match penalty {
            PenaltyKind::L1 => g,
            PenaltyKind::GroupLasso => g * (m as f64 / mj as f64).sqrt(),
        };
        best = best.max(g);
    }
    T::lit(best)
}

/// Largest per-target `λ_max` of the given model kind.
pub fn lambda_max<T: Scalar>(data: &CategoricalDataset, kind: ModelKind) -> T {
    (0..data.n_series())
        .map(|i| {
            let trans = transition_pairs(data, i);
            match kind.mtd_penalty() {
                Some(penalty) => mtd_lambda_max::<T>(&trans, penalty),
                None => mltd_lambda_max::<T>(&trans),
            }
        })
        .fold(T::zero(), T::max)
}

/// `n` log-spaced values from `top` down to `ratio·top`.
pub fn lambda_grid<T: Scalar>(top: T, n: usize, ratio: T) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("lambda grid needs at least one point".into()));
    }
    if !(top > T::zero()) || !top.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda grid top must be positive, got {top}")));
    }
    if !(ratio > T::zero() && ratio < T::one()) {
        return Err(Error::InvalidConfig(format!("lambda ratio must lie in (0, 1), got {ratio}")));
    }
    if n == 1 {
        return Ok(vec![top]);
    }
    let step = ratio.ln() / T::from_usize_lossy(n - 1);
    Ok((0..n).map(|k| top * (step * T::from_usize_lossy(k)).exp()).collect())
}

/// Grid from `LAMBDA_MAX_MARGIN·λ_max` down by `ratio`. Falls back to a top of 1
/// when the data give `λ_max = 0` (for example, constant series).
pub fn auto_lambda_grid<T: Scalar>(data: &CategoricalDataset, kind: ModelKind, n: usize, ratio: T) -> Result<Vec<T>> {
    let lmax: T = lambda_max(data, kind);
    let top = if lmax > T::zero() { lmax * T::lit(LAMBDA_MAX_MARGIN) } else { T::one() };
    lambda_grid(top, n, ratio)
}

fn validate_lambdas<T: Scalar>(lambdas: &[T]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if lambdas.iter().any(|l| !(*l >= T::zero()) || !l.is_finite()) {
        return Err(Error::InvalidConfig("lambdas must be finite and ≥ 0".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidConfig("lambdas must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fits one target at every λ, optionally warm-starting from the previous λ.
pub fn fit_target_path<T: Scalar>(
    transitions: &TransitionSet,
    kind: ModelKind,
    lambdas: &[T],
    config: &PathConfig<T>,
) -> Result<Vec<CellFit<T>>> {
    validate_lambdas(lambdas)?;
    let mut cells: Vec<CellFit<T>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let previous = if config.warm_start { cells.last().map(|c| &c.model) } else { None };
        let cell = match kind.mtd_penalty() {
            Some(penalty) => {
                let cfg = MtdFitConfig {
                    lambda,
                    penalty,
                    ..config.mtd.clone()
                };
                let warm = match previous {
                    Some(FittedModel::Mtd(p)) => Some(p),
                    _ => None,
                };
                let fit = fit_mtd_transitions(transitions, &cfg, warm)?;
                CellFit {
                    model: FittedModel::Mtd(fit.params),
                    objective: fit.objective,
                    status: fit.status,
                }
            }
            None => {
                let cfg = MltdFitConfig {
                    lambda,
                    ..config.mltd.clone()
                };
                let warm = match previous {
                    Some(FittedModel::Mltd(p)) => Some(p),
                    _ => None,
                };
                let fit = fit_mltd_transitions(transitions, &cfg, warm)?;
                CellFit {
                    model: FittedModel::Mltd(fit.params),
                    objective: fit.objective,
                    status: fit.status,
                }
            }
        };
        cells.push(cell);
    }
    Ok(cells)
}

/// Weight matrices of every target over a descending λ grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegPath<T> {
    pub kind: ModelKind,
    pub lambdas: Vec<T>,
    /// `weights[k][(i, j)]`: strength of `j -> i` at `lambdas[k]`.
    pub weights: Vec<Matrix<T>>,
    /// `objectives[k][i]`: penalized objective of target `i` at `lambdas[k]`.
    pub objectives: Vec<Vec<T>>,
    pub statuses: Vec<Vec<FitStatus>>,
}

impl<T: Scalar> RegPath<T> {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn graphs(&self, tau: T) -> Result<Vec<GrangerGraph<T>>> {
        self.weights.iter().map(|w| GrangerGraph::from_weights(w.clone(), tau)).collect()
    }

    /// Cells whose fit did not converge, as `(lambda index, target)`.
    pub fn unconverged(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, row) in self.statuses.iter().enumerate() {
            for (i, s) in row.iter().enumerate() {
                if !s.is_converged() {
                    out.push((k, i));
                }
            }
        }
        out
    }
}

/// Fits every target at every λ; targets run in parallel.
pub fn reg_path<T: Scalar>(data: &CategoricalDataset, kind: ModelKind, lambdas: &[T], config: &PathConfig<T>) -> Result<RegPath<T>> {
    validate_lambdas(lambdas)?;
    let d = data.n_series();
    let per_target: Vec<Vec<CellFit<T>>> = (0..d)
        .into_par_iter()
        .map(|i| fit_target_path(&transition_pairs(data, i), kind, lambdas, config))
        .collect::<Result<_>>()?;
    let mut weights = Vec::with_capacity(lambdas.len());
    let mut objectives = Vec::with_capacity(lambdas.len());
    let mut statuses = Vec::with_capacity(lambdas.len());
    for k in 0..lambdas.len() {
        let mut w = Matrix::zeros(d, d);
        for (i, cells) in per_target.iter().enumerate() {
            w.row_mut(i).copy_from_slice(&cells[k].model.weights());
        }
        weights.push(w);
        objectives.push(per_target.iter().map(|cells| cells[k].objective).collect());
        statuses.push(per_target.iter().map(|cells| cells[k].status).collect());
    }
    Ok(RegPath {
        kind,
        lambdas: lambdas.to_vec(),
        weights,
        objectives,
        statuses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AucOptions {
    pub cutoff: f64,
    pub include_diagonal: bool,
}

impl Default for AucOptions {
    fn default() -> Self {
        Self {
            cutoff: SUPPORT_CUTOFF,
            include_diagonal: true,
        }
    }
}

/// Supports of every path graph, `weight > cutoff`.
pub fn path_supports<T: Scalar>(path: &RegPath<T>, cutoff: f64) -> Vec<Vec<Vec<bool>>> {
    path.weights
        .iter()
        .map(|w| {
            (0..w.rows())
                .map(|i| w.row(i).iter().map(|x| x.as_f64() > cutoff).collect())
                .collect()
        })
        .collect()
}

/// ROC points of a support sequence, with `(0, 0)` and `(1, 1)` added, sorted by
/// FPR and then TPR.
pub fn roc_points(truth: &[Vec<bool>], supports: &[Vec<Vec<bool>>], include_diagonal: bool) -> Result<Vec<(f64, f64)>> {
    let d = truth.len();
    if truth.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("truth adjacency must be square".into()));
    }
    let cells = |i: usize, j: usize| include_diagonal || i != j;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for (i, row) in truth.iter().enumerate() {
        for (j, &t) in row.iter().enumerate() {
            if cells(i, j) {
                if t {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTruth);
    }
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for support in supports {
        if support.len() != d || support.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("support size differs from the truth".into()));
        }
        let (mut tp, mut fp) = (0usize, 0usize);
        for i in 0..d {
            for j in 0..d {
                if cells(i, j) && support[i][j] {
                    if truth[i][j] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(points)
}

/// Trapezoid area under the ROC points of a support sequence.
pub fn auc_from_supports(truth: &[Vec<bool>], supports: &[Vec<Vec<bool>>], include_diagonal: bool) -> Result<f64> {
    let points = roc_points(truth, supports, include_diagonal)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

pub fn auc<T: Scalar>(truth: &[Vec<bool>], path: &RegPath<T>, options: AucOptions) -> Result<f64> {
    auc_from_supports(truth, &path_supports(path, options.cutoff), options.include_diagonal)
}

/// `k` contiguous blocks covering `0..n` with sizes differing by at most one.
pub fn fold_ranges(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig("cross-validation needs k ≥ 2".into()));
    }
    if n < k {
        return Err(Error::InvalidConfig(format!("{n} transitions cannot fill {k} folds")));
    }
    Ok((0..k).map(|f| f * n / k..(f + 1) * n / k).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult<T> {
    pub kind: ModelKind,
    pub lambdas: Vec<T>,
    /// `fold_nll[k][f]`: held-out nll per transition, summed over targets.
    pub fold_nll: Vec<Vec<T>>,
    pub mean_nll: Vec<T>,
    pub best_index: usize,
    pub best_lambda: T,
}

/// Blocked `k`-fold cross-validation over a descending λ grid.
///
/// The `T − 1` transition pairs are cut into `k` contiguous blocks. Each block
/// is scored by the held-out nll per pair of models fit on the other blocks.
/// The selected λ minimizes the fold mean; ties go to the larger λ.
pub fn cross_validate<T: Scalar>(
    data: &CategoricalDataset,
    kind: ModelKind,
    lambdas: &[T],
    k: usize,
    config: &PathConfig<T>,
) -> Result<CvResult<T>> {
    validate_lambdas(lambdas)?;
    let n = data.n_transitions();
    let folds = fold_ranges(n, k)?;
    let d = data.n_series();
    // per_target[i][f][l]: held-out nll of target i on fold f at lambda l
    let per_target: Vec<Vec<Vec<T>>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let trans = transition_pairs(data, i);
            folds
                .iter()
                .map(|fold| {
                    let train = trans.subset((0..n).filter(|t| !fold.contains(t)));
                    let test = trans.subset(fold.clone());
                    fit_target_path(&train, kind, lambdas, config)?
                        .iter()
                        .map(|cell| cell.model.nll(&test))
                        .collect::<Result<Vec<T>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut fold_nll = vec![vec![T::zero(); k]; lambdas.len()];
    for target in &per_target {
        for (f, per_lambda) in target.iter().enumerate() {
            for (l, &v) in per_lambda.iter().enumerate() {
                fold_nll[l][f] = fold_nll[l][f] + v;
            }
        }
    }
    for row in &mut fold_nll {
        for (f, v) in row.iter_mut().enumerate() {
            *v = *v / T::from_usize_lossy(folds[f].len());
        }
    }
    let mean_nll: Vec<T> = fold_nll
        .iter()
        .map(|row| row.iter().copied().sum::<T>() / T::from_usize_lossy(k))
        .collect();
    let mut best_index = 0;
    for (l, &v) in mean_nll.iter().enumerate() {
        if v < mean_nll[best_index] {
            best_index = l;
        }
    }
    Ok(CvResult {
        kind,
        lambdas: lambdas.to_vec(),
        fold_nll,
        mean_nll,
        best_index,
        best_lambda: lambdas[best_index],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub d: usize,
    pub m: usize,
    pub t: usize,
    pub n_reps: usize,
    pub methods: Vec<ModelKind>,
    pub seed: u64,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub include_diagonal: bool,
    pub path: PathConfig<f64>,
}

impl ExperimentConfig {
    pub fn new(regime: Regime, d: usize, m: usize, t: usize, n_reps: usize, seed: u64) -> Self {
        Self {
            regime,
            d,
            m,
            t,
            n_reps,
            methods: ModelKind::ALL.to_vec(),
            seed,
            n_lambdas: DEFAULT_N_LAMBDAS,
            lambda_ratio: DEFAULT_LAMBDA_RATIO,
            include_diagonal: true,
            path: PathConfig::default(),
        }
    }
}

/// One `(replicate, method)` outcome; `auc` is `None` when the replicate failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub rep: usize,
    pub method: ModelKind,
    pub regime: String,
    pub d: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

/// Per-replicate simulation seeds drawn from one stream seeded by `seed`.
pub fn replicate_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Simulates `n_reps` datasets and scores every method's automatic-grid path by AUC.
///
/// Replicates run in parallel; failures are recorded in the row, not returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    if config.n_reps == 0 {
        return Err(Error::InvalidConfig("n_reps must be positive".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    SimSpec::new(config.regime, config.d, config.m, config.t, config.seed).validate()?;
    let seeds = replicate_seeds(config.seed, config.n_reps);
    let rows: Vec<Vec<ExperimentRow>> = seeds
        .par_iter()
        .enumerate()
        .map(|(rep, &seed)| {
            let spec = SimSpec::new(config.regime, config.d, config.m, config.t, seed);
            let sim = simulate(&spec);
            config
                .methods
                .iter()
                .map(|&method| {
                    let outcome = sim.as_ref().map_err(|e| e.to_string()).and_then(|sim| {
                        score_method(&sim.data, &sim.adjacency, method, config).map_err(|e| e.to_string())
                    });
                    ExperimentRow {
                        rep,
                        method,
                        regime: config.regime.name().to_string(),
                        d: config.d,
                        m: config.m,
                        t: config.t,
                        auc: outcome.as_ref().ok().copied(),
                        error: outcome.err(),
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn score_method(data: &CategoricalDataset, truth: &[Vec<bool>], method: ModelKind, config: &ExperimentConfig) -> Result<f64> {
    let grid = auto_lambda_grid(data, method, config.n_lambdas, config.lambda_ratio)?;
    let path = reg_path(data, method, &grid, &config.path)?;
    auc(
        truth,
        &path,
        AucOptions {
            include_diagonal: config.include_diagonal,
            ..AucOptions::default()
        },
    )
}

/// Median and quartiles of the AUCs of one `(method, regime, d, m, T)` condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: ModelKind,
    pub regime: String,
    pub d: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Groups rows by condition in first-appearance order.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<ExperimentSummary> {
    let mut keys: Vec<(ModelKind, &str, usize, usize, usize)> = Vec::new();
    for r in rows {
        let key = (r.method, r.regime.as_str(), r.d, r.m, r.t);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, regime, d, m, t)| {
            let group: Vec<&ExperimentRow> = rows
                .iter()
                .filter(|r| (r.method, r.regime.as_str(), r.d, r.m, r.t) == (method, regime, d, m, t))
                .collect();
            let mut aucs: Vec<f64> = group.iter().filter_map(|r| r.auc).collect();
            aucs.sort_by(f64::total_cmp);
            ExperimentSummary {
                method,
                regime: regime.to_string(),
                d,
                m,
                t,
                n_ok: aucs.len(),
                n_failed: group.len() - aucs.len(),
                median: quantile(&aucs, 0.5),
                q1: quantile(&aucs, 0.25),
                q3: quantile(&aucs, 0.75),
            }
        })
        .collect()
}
