//! Seeded generators for the sparse MTD, sparse mLTD and quantized latent VAR
//! benchmark regimes, plus a Markov-chain sampler for arbitrary per-series
//! conditional models.
//!
//! `adjacency[i][j]` is true when series `j` drives series `i`. Self-edges are
//! part of the mask.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalDataset, TransitionModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mltd::MltdParams;
use crate::mtd::MtdParams;
use crate::scalar::Scalar;

/// Resample budget for one `P^{ij}` under the column-separation rule.
pub const MAX_REJECTIONS: usize = 10_000;
/// Spectral radius the VAR transition matrix is scaled down to.
pub const VAR_SPECTRAL_CAP: f64 = 0.9;
/// VAR steps discarded before recording.
pub const VAR_BURN_IN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    SparseMtd {
        delta: f64,
        alpha: f64,
        dirichlet_gamma: f64,
        rho: f64,
    },
    SparseMltd {
        delta: f64,
        sigma_z: f64,
    },
    LatentVar {
        delta: f64,
        sigma_a: f64,
        sigma_eps: f64,
    },
}

impl Regime {
    pub fn sparse_mtd() -> Self {
        Regime::SparseMtd {
            delta: 0.15,
            alpha: 5.0,
            dirichlet_gamma: 0.7,
            rho: 0.3,
        }
    }

    pub fn sparse_mltd() -> Self {
        Regime::SparseMltd {
            delta: 0.15,
            sigma_z: 1.0,
        }
    }

    pub fn latent_var() -> Self {
        Regime::LatentVar {
            delta: 0.15,
            sigma_a: 1.0,
            sigma_eps: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::SparseMtd { .. } => "mtd",
            Regime::SparseMltd { .. } => "mltd",
            Regime::LatentVar { .. } => "var",
        }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            Regime::SparseMtd { delta, .. } | Regime::SparseMltd { delta, .. } | Regime::LatentVar { delta, .. } => delta,
        }
    }

    /// Same regime with a different edge probability.
    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            Regime::SparseMtd {
                alpha,
                dirichlet_gamma,
                rho,
                ..
            } => Regime::SparseMtd {
                delta,
                alpha,
                dirichlet_gamma,
                rho,
            },
            Regime::SparseMltd { sigma_z, .. } => Regime::SparseMltd { delta, sigma_z },
            Regime::LatentVar { sigma_a, sigma_eps, .. } => Regime::LatentVar {
                delta,
                sigma_a,
                sigma_eps,
            },
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtd" => Ok(Regime::sparse_mtd()),
            "mltd" => Ok(Regime::sparse_mltd()),
            "var" => Ok(Regime::latent_var()),
            other => Err(Error::Parse(format!("unknown regime `{other}` (expected mtd, mltd or var)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub d: usize,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl SimSpec {
    pub fn new(regime: Regime, d: usize, m: usize, t: usize, seed: u64) -> Self {
        Self { d, m, t, seed, regime }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be positive".into()));
        }
        if self.m < 2 {
            return Err(Error::InvalidConfig("m must be at least 2".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidConfig("T must be at least 2".into()));
        }
        let delta = self.regime.delta();
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidConfig(format!("delta {delta} outside [0, 1]")));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        match self.regime {
            Regime::SparseMtd {
                alpha,
                dirichlet_gamma,
                rho,
                ..
            } => {
                positive("alpha", alpha)?;
                positive("dirichlet_gamma", dirichlet_gamma)?;
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidConfig(format!("rho {rho} outside [0, 1]")));
                }
            }
            Regime::SparseMltd { sigma_z, .. } => positive("sigma_z", sigma_z)?,
            Regime::LatentVar { sigma_a, sigma_eps, .. } => {
                positive("sigma_a", sigma_a)?;
                positive("sigma_eps", sigma_eps)?;
            }
        }
        Ok(())
    }
}

/// Generating parameters, when the regime has them.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    Mtd(Vec<MtdParams<f64>>),
    Mltd(Vec<MltdParams<f64>>),
    Var(Matrix<f64>),
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub spec: SimSpec,
    pub truth: GroundTruth,
    pub adjacency: Vec<Vec<bool>>,
    pub data: CategoricalDataset,
}

/// Dispatches on the regime.
pub fn simulate(spec: &SimSpec) -> Result<Simulation> {
    let (truth, adjacency, data) = match spec.regime {
        Regime::SparseMtd { .. } => {
            let (models, adjacency, data) = gen_sparse_mtd(spec)?;
            (GroundTruth::Mtd(models), adjacency, data)
        }
        Regime::SparseMltd { .. } => {
            let (models, adjacency, data) = gen_sparse_mltd(spec)?;
            (GroundTruth::Mltd(models), adjacency, data)
        }
        Regime::LatentVar { .. } => {
            let (a, adjacency, data) = gen_latent_var_with_matrix(spec)?;
            (GroundTruth::Var(a), adjacency, data)
        }
    };
    Ok(Simulation {
        spec: *spec,
        truth,
        adjacency,
        data,
    })
}

type Generated<M> = (Vec<M>, Vec<Vec<bool>>, CategoricalDataset);

/// Sparse MTD ground truth with `γ_0 = 0` and the chain it generates.
pub fn gen_sparse_mtd(spec: &SimSpec) -> Result<Generated<MtdParams<f64>>> {
    spec.validate()?;
    let Regime::SparseMtd {
        delta,
        alpha,
        dirichlet_gamma,
        rho,
    } = spec.regime
    else {
        return Err(Error::InvalidConfig("simulation regime is not sparse MTD".into()));
    };
    let (d, m) = (spec.d, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gamma_alpha = Gamma::new(alpha, 1.0).map_err(|e| Error::Simulation(e.to_string()))?;
    let gamma_cols = Gamma::new(dirichlet_gamma, 1.0).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut models = Vec::with_capacity(d);
    let mut adjacency = Vec::with_capacity(d);
    for i in 0..d {
        let mut mask = bernoulli_mask(&mut rng, d, delta);
        if !mask.iter().any(|&b| b) {
            mask[rng.random_range(0..d)] = true;
        }
        let phi = dirichlet(&mut rng, &gamma_alpha, d);
        let masked_total: f64 = phi.iter().zip(&mask).filter(|(_, &on)| on).map(|(p, _)| p).sum();
        let mut pair_mats = Vec::with_capacity(d);
        for j in 0..d {
            if !mask[j] {
                pair_mats.push(Matrix::zeros(m, m));
                continue;
            }
            let p = separated_columns(&mut rng, &gamma_cols, m, m, rho)?;
            pair_mats.push(p.scale(phi[j] / masked_total));
        }
        models.push(MtdParams::new(i, vec![0.0; m], pair_mats)?);
        adjacency.push(mask);
    }
    let data = sample_chain_with_rng(&models, spec.t, &mut rng)?;
    Ok((models, adjacency, data))
}

/// Sparse mLTD ground truth with a zero intercept and the chain it generates.
pub fn gen_sparse_mltd(spec: &SimSpec) -> Result<Generated<MltdParams<f64>>> {
    spec.validate()?;
    let Regime::SparseMltd { delta, sigma_z } = spec.regime else {
        return Err(Error::InvalidConfig("simulation regime is not sparse mLTD".into()));
    };
    let (d, m) = (spec.d, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, sigma_z).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut models = Vec::with_capacity(d);
    let mut adjacency = Vec::with_capacity(d);
    for i in 0..d {
        let mask = bernoulli_mask(&mut rng, d, delta);
        let pair_mats = mask
            .iter()
            .map(|&on| {
                if on {
                    Matrix::from_vec(m, m, (0..m * m).map(|_| normal.sample(&mut rng)).collect()).expect("m x m block")
                } else {
                    Matrix::zeros(m, m)
                }
            })
            .collect();
        models.push(MltdParams::new_identifiable(i, vec![0.0; m], pair_mats)?);
        adjacency.push(mask);
    }
    let data = sample_chain_with_rng(&models, spec.t, &mut rng)?;
    Ok((models, adjacency, data))
}

/// Quantized sparse VAR(1); returns the adjacency and the categorical series.
pub fn gen_latent_var(spec: &SimSpec) -> Result<(Vec<Vec<bool>>, CategoricalDataset)> {
    let (_, adjacency, data) = gen_latent_var_with_matrix(spec)?;
    Ok((adjacency, data))
}

/// As [`gen_latent_var`], also returning the (rescaled) transition matrix `A`.
pub fn gen_latent_var_with_matrix(spec: &SimSpec) -> Result<(Matrix<f64>, Vec<Vec<bool>>, CategoricalDataset)> {
    spec.validate()?;
    let Regime::LatentVar {
        delta,
        sigma_a,
        sigma_eps,
    } = spec.regime
    else {
        return Err(Error::InvalidConfig("simulation regime is not latent VAR".into()));
    };
    let (d, t) = (spec.d, spec.t);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coef = Normal::new(0.0, sigma_a).map_err(|e| Error::Simulation(e.to_string()))?;
    let noise = Normal::new(0.0, sigma_eps).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut adjacency = Vec::with_capacity(d);
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let mask = bernoulli_mask(&mut rng, d, delta);
        for (j, &on) in mask.iter().enumerate() {
            let b = coef.sample(&mut rng);
            if on {
                a[(i, j)] = b;
            }
        }
        adjacency.push(mask);
    }
    let radius = spectral_radius(&a);
    if radius > VAR_SPECTRAL_CAP {
        a *= VAR_SPECTRAL_CAP / radius;
    }

    let mut y = nalgebra::DVector::<f64>::zeros(d);
    let mut path = Vec::with_capacity(t);
    for step in 0..VAR_BURN_IN + t {
        let eps = nalgebra::DVector::from_fn(d, |_, _| noise.sample(&mut rng));
        y = &a * &y + eps;
        if step >= VAR_BURN_IN {
            path.push(y.iter().copied().collect::<Vec<f64>>());
        }
    }
    let mut rows = vec![vec![0usize; d]; t];
    for j in 0..d {
        let column: Vec<f64> = path.iter().map(|r| r[j]).collect();
        for (row, c) in rows.iter_mut().zip(quantize_by_rank(&column, spec.m)) {
            row[j] = c;
        }
    }
    let data = CategoricalDataset::new(&rows, Some(&vec![spec.m; d]))?;
    let a = Matrix::from_vec(d, d, (0..d * d).map(|k| a[(k / d, k % d)]).collect())?;
    Ok((a, adjacency, data))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Category `⌊rank·m/T⌋` of each value, so category `k` holds the values
/// between the empirical `k/m` and `(k+1)/m` quantiles. Ties keep time order.
pub fn quantize_by_rank(values: &[f64], m: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = rank * m / n;
    }
    out
}

/// Samples `n_times` rows: `x_0` uniform over each model's alphabet, then every
/// series independently from its conditional given the previous row.
pub fn sample_chain<T: Scalar, M: TransitionModel<T>>(models: &[M], n_times: usize, seed: u64) -> Result<CategoricalDataset> {
    sample_chain_with_rng(models, n_times, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_chain_with_rng<T: Scalar, M: TransitionModel<T>, R: Rng + ?Sized>(
    models: &[M],
    n_times: usize,
    rng: &mut R,
) -> Result<CategoricalDataset> {
    if models.is_empty() {
        return Err(Error::Empty);
    }
    if n_times < 2 {
        return Err(Error::TooShort(n_times));
    }
    let sizes: Vec<usize> = models.iter().map(|m| m.target_alphabet()).collect();
    let mut rows = Vec::with_capacity(n_times);
    rows.push(sizes.iter().map(|&m| rng.random_range(0..m)).collect::<Vec<usize>>());
    for t in 1..n_times {
        let prev = &rows[t - 1];
        let row = models
            .iter()
            .map(|model| draw_categorical(rng, &model.cond_prob(prev)))
            .collect::<Vec<usize>>();
        rows.push(row);
    }
    CategoricalDataset::new(&rows, Some(&sizes))
}

fn draw_categorical<T: Scalar, R: Rng + ?Sized>(rng: &mut R, probs: &[T]) -> usize {
    let total: f64 = probs.iter().map(|p| p.as_f64().max(0.0)).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p.as_f64().max(0.0);
        if u < acc {
            return a;
        }
    }
    // u landed on the rounding gap at the top; take the last positive category
    probs.iter().rposition(|p| p.as_f64() > 0.0).unwrap_or(probs.len() - 1)
}

fn bernoulli_mask<R: Rng + ?Sized>(rng: &mut R, d: usize, delta: f64) -> Vec<bool> {
    (0..d).map(|_| rng.random::<f64>() < delta).collect()
}

/// Dirichlet draw through normalized Gamma variates; redraws on total underflow.
fn dirichlet<R: Rng + ?Sized>(rng: &mut R, gamma: &Gamma<f64>, k: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return g.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Mean total-variation distance over all column pairs.
pub fn mean_pairwise_tv(p: &Matrix<f64>) -> f64 {
    let cols = p.cols();
    if cols < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..cols {
        for l in k + 1..cols {
            total += 0.5 * (0..p.rows()).map(|a| (p[(a, k)] - p[(a, l)]).abs()).sum::<f64>();
        }
    }
    total / (cols * (cols - 1) / 2) as f64
}

fn separated_columns<R: Rng + ?Sized>(rng: &mut R, gamma: &Gamma<f64>, rows: usize, cols: usize, rho: f64) -> Result<Matrix<f64>> {
    for _ in 0..=MAX_REJECTIONS {
        let mut p = Matrix::zeros(rows, cols);
        for c in 0..cols {
            for (a, v) in dirichlet(rng, gamma, rows).into_iter().enumerate() {
                p[(a, c)] = v;
            }
        }
        if mean_pairwise_tv(&p) >= rho {
            return Ok(p);
        }
    }
    Err(Error::Simulation(format!(
        "no transition matrix with mean column TV ≥ {rho} after {MAX_REJECTIONS} resamples"
    )))
}

/// Random strictly feasible MTD parameters with every entry at least `eps`.
///
/// A feasible point `y` with well separated positive entries is lifted to
/// `eps·1 + (1 − (d+1)·m_i·eps)·y`, which keeps equal column sums and unit mass.
pub fn random_mtd_params<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    target: usize,
    target_alphabet: usize,
    parent_alphabets: &[usize],
    eps: T,
) -> MtdParams<T> {
    let m = target_alphabet;
    let d = parent_alphabets.len();
    let weights: Vec<f64> = (0..=d).map(|_| rng.random_range(0.2..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let column = |rng: &mut R, mass: f64| -> Vec<f64> {
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = c.iter().sum();
        c.into_iter().map(|x| mass * x / s).collect()
    };
    let n_simplex = T::from_usize_lossy((d + 1) * m);
    let scale = T::one() - n_simplex * eps;
    let lift = |y: f64| eps + scale * T::lit(y);
    let intercept = column(rng, weights[0] / wsum).into_iter().map(lift).collect();
    let pair_mats = parent_alphabets
        .iter()
        .enumerate()
        .map(|(j, &mj)| {
            let mut z = Matrix::zeros(m, mj);
            for c in 0..mj {
                for (a, v) in column(rng, weights[j + 1] / wsum).into_iter().enumerate() {
                    z[(a, c)] = lift(v);
                }
            }
            z
        })
        .collect();
    MtdParams {
        target,
        intercept,
        pair_mats,
    }
}

/// Random mLTD parameters with free entries uniform on `(-scale, scale)`.
pub fn random_mltd_params<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    target: usize,
    target_alphabet: usize,
    parent_alphabets: &[usize],
    scale: T,
) -> MltdParams<T> {
    let s = scale.as_f64();
    let draw = |rng: &mut R| T::lit(rng.random_range(-s..s));
    let intercept = (0..target_alphabet).map(|_| draw(rng)).collect();
    let pair_mats = parent_alphabets
        .iter()
        .map(|&mj| Matrix::from_vec(target_alphabet, mj, (0..target_alphabet * mj).map(|_| draw(rng)).collect()).expect("block size"))
        .collect();
    MltdParams::new_identifiable(target, intercept, pair_mats).expect("target alphabet ≥ 2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::transition_pairs;
    use crate::mltd::mltd_cond_prob;

    fn mtd_spec(d: usize, m: usize, t: usize, seed: u64) -> SimSpec {
        SimSpec::new(Regime::sparse_mtd(), d, m, t, seed)
    }

    #[test]
    fn random_mtd_params_feasible_and_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_mtd_params::<f64, _>(&mut rng, 0, 3, &[2, 4, 3], 1e-3);
            p.check_feasible(1e-12).unwrap();
            assert!(p.intercept.iter().all(|&x| x >= 1e-3));
            assert!(p.pair_mats.iter().all(|z| z.min() >= 1e-3));
        }
    }

    #[test]
    fn sparse_mtd_truth_is_feasible_and_matches_adjacency() {
        let (models, adjacency, data) = gen_sparse_mtd(&mtd_spec(8, 3, 100, 2)).unwrap();
        assert_eq!(data.n_times(), 100);
        for (i, model) in models.iter().enumerate() {
            model.check_feasible(1e-12).unwrap();
            assert_eq!(model.intercept, vec![0.0; 3]);
            assert!(adjacency[i].iter().any(|&b| b));
            for j in 0..8 {
                assert_eq!(adjacency[i][j], model.pair_mats[j].sum() > 0.0);
                if adjacency[i][j] {
                    let unit = model.pair_mats[j].scale(1.0 / model.pair_mats[j].col_sum(0));
                    assert!(mean_pairwise_tv(&unit) >= 0.3);
                }
            }
        }
    }

    #[test]
    fn dense_single_series_chain_matches_model() {
        let regime = Regime::sparse_mtd().with_delta(1.0);
        let (models, adjacency, data) = gen_sparse_mtd(&SimSpec::new(regime, 1, 3, 100_000, 3)).unwrap();
        assert_eq!(adjacency, vec![vec![true]]);
        let mut counts = [[0.0f64; 3]; 3];
        for s in transition_pairs(&data, 0).iter() {
            counts[s.context[0]][s.target] += 1.0;
        }
        for b in 0..3 {
            let total: f64 = counts[b].iter().sum();
            let q = models[0].cond_prob(&[b]);
            let tv: f64 = 0.5 * (0..3).map(|a| (counts[b][a] / total - q[a]).abs()).sum::<f64>();
            assert!(tv <= 0.05, "column {b}: tv {tv}");
        }
    }

    #[test]
    fn zero_rho_never_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gamma = Gamma::new(0.7, 1.0).unwrap();
        let mut reference = rng.clone();
        let p = separated_columns(&mut rng, &gamma, 3, 3, 0.0).unwrap();
        let mut first = Matrix::zeros(3, 3);
        for c in 0..3 {
            for (a, v) in dirichlet(&mut reference, &gamma, 3).into_iter().enumerate() {
                first[(a, c)] = v;
            }
        }
        assert_eq!(p, first);
    }

    #[test]
    fn unreachable_separation_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gamma = Gamma::new(1000.0, 1.0).unwrap();
        assert!(matches!(separated_columns(&mut rng, &gamma, 3, 3, 1.0), Err(Error::Simulation(_))));
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for regime in [Regime::sparse_mtd(), Regime::sparse_mltd(), Regime::latent_var()] {
            let spec = SimSpec::new(regime, 6, 3, 150, 9);
            let a = simulate(&spec).unwrap();
            let b = simulate(&spec).unwrap();
            assert_eq!(a.data.to_rows(), b.data.to_rows());
            assert_eq!(a.adjacency, b.adjacency);
            assert_eq!(a.truth, b.truth);
            let c = simulate(&SimSpec { seed: 10, ..spec }).unwrap();
            assert_ne!(a.data.to_rows(), c.data.to_rows());
        }
    }

    #[test]
    fn sparse_mltd_zero_delta_is_iid_uniform() {
        let regime = Regime::sparse_mltd().with_delta(0.0);
        let (models, adjacency, data) = gen_sparse_mltd(&SimSpec::new(regime, 3, 4, 20_000, 6)).unwrap();
        assert!(adjacency.iter().flatten().all(|&b| !b));
        for model in &models {
            assert!(model.is_identifiable());
            assert!(mltd_cond_prob(model, &[1, 2, 3]).iter().all(|&q| (q - 0.25).abs() < 1e-15));
        }
        for j in 0..3 {
            let mut counts = [0.0; 4];
            for t in 0..data.n_times() {
                counts[data.value(t, j)] += 1.0;
            }
            let n = data.n_times() as f64;
            let chi2: f64 = counts.iter().map(|c| (c - n / 4.0).powi(2) / (n / 4.0)).sum();
            // 3 degrees of freedom; 16.27 is the 0.999 quantile
            assert!(chi2 < 16.27, "chi2 {chi2}");
        }
    }

    #[test]
    fn sparse_mltd_support_matches_adjacency() {
        let (models, adjacency, _) = gen_sparse_mltd(&SimSpec::new(Regime::sparse_mltd().with_delta(0.4), 6, 3, 50, 7)).unwrap();
        for (i, model) in models.iter().enumerate() {
            assert!(model.is_identifiable());
            for j in 0..6 {
                assert_eq!(adjacency[i][j], model.pair_mats[j].frobenius_norm() > 0.0);
            }
        }
    }

    #[test]
    fn quantile_rule() {
        let values = [0.5, -2.0, 3.0, 0.1, 1.0, -1.0];
        // sorted: -2, -1, 0.1, 0.5, 1, 3 → ranks 0..5, category ⌊3r/6⌋
        assert_eq!(quantize_by_rank(&values, 3), vec![1, 0, 2, 1, 2, 0]);
    }

    #[test]
    fn latent_var_marginals_and_stability() {
        let spec = SimSpec::new(Regime::latent_var().with_delta(0.3), 5, 3, 300, 8);
        let (a, adjacency, data) = gen_latent_var_with_matrix(&spec).unwrap();
        let dm = DMatrix::from_row_slice(5, 5, a.as_slice());
        assert!(spectral_radius(&dm) <= VAR_SPECTRAL_CAP + 1e-9);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(adjacency[i][j], a[(i, j)] != 0.0);
            }
            let mut counts = [0usize; 3];
            for t in 0..300 {
                counts[data.value(t, i)] += 1;
            }
            assert_eq!(counts, [100, 100, 100]);
        }
    }

    #[test]
    fn deterministic_conditionals_fix_the_trajectory() {
        // series 0 copies series 1, series 1 flips itself
        let copy = MtdParams::new(0, vec![0.0, 0.0], vec![Matrix::zeros(2, 2), Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()]).unwrap();
        let flip = MtdParams::new(1, vec![0.0, 0.0], vec![Matrix::zeros(2, 2), Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()]).unwrap();
        let data = sample_chain(&[copy, flip], 20, 11).unwrap();
        for t in 1..20 {
            assert_eq!(data.value(t, 1), 1 - data.value(t - 1, 1));
            assert_eq!(data.value(t, 0), data.value(t - 1, 1));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(mtd_spec(0, 3, 10, 1).validate().is_err());
        assert!(mtd_spec(3, 1, 10, 1).validate().is_err());
        assert!(mtd_spec(3, 3, 1, 1).validate().is_err());
        assert!(SimSpec::new(Regime::sparse_mtd().with_delta(1.5), 3, 3, 10, 1).validate().is_err());
        assert!(gen_sparse_mltd(&mtd_spec(3, 3, 10, 1)).is_err());
    }
}
