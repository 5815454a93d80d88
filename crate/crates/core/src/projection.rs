//! Euclidean projection onto the (ε-floored) MTD constraint set.
//!
//! For one target series with alphabet `m_i`, the stacked parameter vector
//! `[z0, vec(Z^1), ..., vec(Z^d)]` is feasible when every entry is `≥ ε`,
//! every `Z^j` has equal column sums, and `sum(z0) + Σ_j colsum(Z^j) = 1`.
//!
//! The set is split as `S ∩ B`: `S` is a floored simplex over `z0` together
//! with the first column of every `Z^j` (all other entries only need the
//! floor), and `B` is the subspace of equal column sums, handled block by
//! block. [`dykstra_project`] alternates the two; [`qp_reference_project`]
//! solves the same projection as a dense QP and exists to check it.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::layout::ParamLayout;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Stop tolerance on the change of successive Dykstra iterates.
pub const DEFAULT_DYKSTRA_TOL: f64 = 1e-10;
pub const DEFAULT_DYKSTRA_MAX_ITER: usize = 10_000;

/// Largest problem handed to the dense QP reference.
pub const QP_MAX_DIM: usize = 4096;

/// The modified MTD constraint set for one target series.
#[derive(Clone, Debug)]
pub struct MtdConstraintSet<T> {
    layout: ParamLayout,
    epsilon: T,
    simplex_idx: Vec<usize>,
    floor_idx: Vec<usize>,
}

impl<T: Scalar> MtdConstraintSet<T> {
    pub fn new(layout: ParamLayout, epsilon: T) -> Result<Self> {
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be ≥ 0, got {epsilon}")));
        }
        let m = layout.target_alphabet();
        let mut simplex_idx: Vec<usize> = layout.intercept_range().collect();
        let mut floor_idx = Vec::new();
        for j in 0..layout.n_parents() {
            let cols = layout.parent_alphabets()[j];
            for r in 0..m {
                for c in 0..cols {
                    let k = layout.index(j, r, c);
                    if c == 0 {
                        simplex_idx.push(k);
                    } else {
                        floor_idx.push(k);
                    }
                }
            }
        }
        if T::from_usize_lossy(simplex_idx.len()) * epsilon >= T::one() {
            return Err(Error::InvalidConfig(format!(
                "epsilon {epsilon} too large: floor mass exceeds 1"
            )));
        }
        Ok(Self {
            layout,
            epsilon,
            simplex_idx,
            floor_idx,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// Projection onto `S`: floored simplex on the simplex coordinates, floor elsewhere.
    fn project_s(&self, x: &[T], out: &mut [T], scratch: &mut SimplexScratch<T>) {
        scratch.values.clear();
        scratch.values.extend(self.simplex_idx.iter().map(|&k| x[k]));
        project_simplex_floor_in_place(&mut scratch.values, T::one(), self.epsilon, &mut scratch.sorted);
        for (&k, &v) in self.simplex_idx.iter().zip(&scratch.values) {
            out[k] = v;
        }
        for &k in &self.floor_idx {
            out[k] = x[k].max(self.epsilon);
        }
    }

    /// Projection onto `B`, in place. The intercept block is unconstrained.
    fn project_b(&self, x: &mut [T]) {
        let m = self.layout.target_alphabet();
        for j in 0..self.layout.n_parents() {
            let cols = self.layout.parent_alphabets()[j];
            project_equal_colsums_in_place(&mut x[self.layout.block_range(j)], m, cols);
        }
    }

    /// Group soft-thresholding of every block towards the floor by `t`, in place.
    fn shrink_blocks(&self, x: &mut [T], t: T) {
        let eps = self.epsilon;
        for j in 0..self.layout.n_parents() {
            let block = &mut x[self.layout.block_range(j)];
            let norm = block.iter().map(|&b| (b - eps) * (b - eps)).sum::<T>().sqrt();
            let scale = if norm > t { T::one() - t / norm } else { T::zero() };
            block.iter_mut().for_each(|b| *b = eps + (*b - eps) * scale);
        }
    }

    /// Violations of the three defining conditions at `z`.
    pub fn residuals(&self, z: &[T]) -> Residuals<T> {
        let m = self.layout.target_alphabet();
        let min_entry = z.iter().copied().fold(T::infinity(), T::min);
        let mut colsum_residual = T::zero();
        let mut mass: T = self.layout.intercept_range().map(|k| z[k]).sum();
        for j in 0..self.layout.n_parents() {
            let cols = self.layout.parent_alphabets()[j];
            let block = &z[self.layout.block_range(j)];
            let sums = col_sums(block, m, cols);
            let mean = sums.iter().copied().sum::<T>() / T::from_usize_lossy(cols);
            for s in &sums {
                colsum_residual = colsum_residual.max((*s - mean).abs());
            }
            mass = mass + mean;
        }
        Residuals {
            min_entry,
            below_floor: (self.epsilon - min_entry).max(T::zero()),
            colsum_residual,
            mass_residual: (mass - T::one()).abs(),
        }
    }

    pub fn contains(&self, z: &[T], tol: T) -> bool {
        let r = self.residuals(z);
        r.below_floor <= tol && r.colsum_residual <= tol && r.mass_residual <= tol
    }
}

/// Constraint violations of a point, see [`MtdConstraintSet::residuals`].
#[derive(Clone, Copy, Debug)]
pub struct Residuals<T> {
    pub min_entry: T,
    pub below_floor: T,
    pub colsum_residual: T,
    pub mass_residual: T,
}

#[derive(Default)]
struct SimplexScratch<T> {
    values: Vec<T>,
    sorted: Vec<T>,
}

fn col_sums<T: Scalar>(block: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); cols];
    for r in 0..rows {
        for (s, &x) in sums.iter_mut().zip(&block[r * cols..(r + 1) * cols]) {
            *s = *s + x;
        }
    }
    sums
}

/// Projects `v` onto `{x ≥ 0, Σx = radius}` by the sort-and-threshold method.
pub fn project_simplex<T: Scalar>(v: &[T], radius: T) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if !(radius > T::zero()) {
        return Err(Error::InvalidConfig(format!("simplex radius must be > 0, got {radius}")));
    }
    let mut out = v.to_vec();
    project_simplex_floor_in_place(&mut out, radius, T::zero(), &mut Vec::with_capacity(v.len()));
    Ok(out)
}

/// Projects onto `{x ≥ floor, Σx = radius}` by shifting to the plain simplex of
/// radius `radius - n·floor`.
fn project_simplex_floor_in_place<T: Scalar>(v: &mut [T], radius: T, floor: T, sorted: &mut Vec<T>) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let inner = radius - T::from_usize_lossy(n) * floor;
    sorted.clear();
    sorted.extend(v.iter().map(|&x| x - floor));
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &u) in sorted.iter().enumerate() {
        cumsum = cumsum + u;
        let candidate = (cumsum - inner) / T::from_usize_lossy(j + 1);
        if u - candidate > T::zero() {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - floor - theta).max(T::zero()) + floor;
    }
}

/// Projects `Z` onto the subspace where every column has the same sum.
///
/// Column `k` is shifted by `(mean - s_k) / rows` on each entry, which is the
/// closed form of `(I - Aᵀ(AAᵀ)⁻¹A) vec(Z)`.
pub fn project_equal_colsums<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let mut out = z.clone();
    let (rows, cols) = (z.rows(), z.cols());
    project_equal_colsums_in_place(out.as_mut_slice(), rows, cols);
    out
}

pub(crate) fn project_equal_colsums_in_place<T: Scalar>(block: &mut [T], rows: usize, cols: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let sums = col_sums(block, rows, cols);
    let mean = sums.iter().copied().sum::<T>() / T::from_usize_lossy(cols);
    let inv_rows = T::one() / T::from_usize_lossy(rows);
    let shift: Vec<T> = sums.iter().map(|&s| (mean - s) * inv_rows).collect();
    for r in 0..rows {
        for (x, &sh) in block[r * cols..(r + 1) * cols].iter_mut().zip(&shift) {
            *x = *x + sh;
        }
    }
}

/// Elementwise `max(v, ε)`.
pub fn project_positive<T: Scalar>(v: &[T], epsilon: T) -> Vec<T> {
    v.iter().map(|&x| x.max(epsilon)).collect()
}

#[derive(Clone, Debug)]
pub struct DykstraOutcome<T> {
    pub point: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Dykstra's alternating projection onto `S ∩ B`.
///
/// Runs `y = P_S(w + u)`, `u ← w + u − y`, `w ← P_B(y + v)`, `v ← y + v − w`
/// until both the largest change in `w` and the largest gap `|w − y|` drop
/// below `tol`. The gap bounds how far the returned `w ∈ B` is from `S`.
/// When `max_iter` is hit first the last iterate is returned with
/// `converged = false`.
pub fn dykstra_project<T: Scalar>(
    z: &[T],
    set: &MtdConstraintSet<T>,
    tol: T,
    max_iter: usize,
) -> Result<DykstraOutcome<T>> {
    dykstra_split(z, set, T::zero(), tol, max_iter)
}

/// `argmin_x ½‖x − z‖² + t·Σ_j ‖X^j − ε‖_F` over `S ∩ B`.
///
/// The norm is measured from the floor matrix (every entry `ε`), which lies in
/// `B`. The Frobenius norm is orthogonally invariant and soft-thresholding
/// only rescales, so the proximal map of the penalty plus the indicator of `B`
/// is `P_B` followed by block-wise soft-thresholding towards the floor.
/// Replacing the `B` step of [`dykstra_project`] by that map gives the
/// Dykstra-like proximal iteration for the sum, which converges to the map
/// above. Centering on the floor keeps the shrink target inside `S`; centered
/// on zero the two steps disagree by ε forever and the iteration crawls.
/// With `t = 0` it is exactly [`dykstra_project`].
pub fn dykstra_prox_group<T: Scalar>(
    z: &[T],
    set: &MtdConstraintSet<T>,
    t: T,
    tol: T,
    max_iter: usize,
) -> Result<DykstraOutcome<T>> {
    if !(t >= T::zero()) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!("shrinkage must be finite and ≥ 0, got {t}")));
    }
    dykstra_split(z, set, t, tol, max_iter)
}

fn dykstra_split<T: Scalar>(
    z: &[T],
    set: &MtdConstraintSet<T>,
    shrink: T,
    tol: T,
    max_iter: usize,
) -> Result<DykstraOutcome<T>> {
    let n = set.dim();
    if z.len() != n {
        return Err(Error::Shape(format!("point has {} entries, set has {n}", z.len())));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("cannot project a non-finite point".into()));
    }
    let mut w = z.to_vec();
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut buf = vec![T::zero(); n];
    let mut scratch = SimplexScratch::default();

    for iteration in 1..=max_iter {
        for k in 0..n {
            buf[k] = w[k] + u[k];
        }
        set.project_s(&buf, &mut y, &mut scratch);
        for k in 0..n {
            u[k] = buf[k] - y[k];
            buf[k] = y[k] + v[k];
        }
        set.project_b(&mut buf);
        if shrink > T::zero() {
            set.shrink_blocks(&mut buf, shrink);
        }
        let mut change = T::zero();
        for k in 0..n {
            v[k] = y[k] + v[k] - buf[k];
            change = change.max((buf[k] - w[k]).abs()).max((buf[k] - y[k]).abs());
        }
        std::mem::swap(&mut w, &mut buf);
        if change < tol {
            return Ok(DykstraOutcome {
                point: w,
                iterations: iteration,
                converged: true,
            });
        }
    }
    Ok(DykstraOutcome {
        point: w,
        iterations: max_iter,
        converged: false,
    })
}

/// Exact projection onto the constraint set by a dense dual active-set QP
/// (Goldfarb–Idnani via the `quadprog` crate).
///
/// Meant for testing and benchmarking; refuses problems above [`QP_MAX_DIM`].
pub fn qp_reference_project<T: Scalar>(z: &[T], set: &MtdConstraintSet<T>) -> Result<Vec<T>> {
    let n = set.dim();
    if z.len() != n {
        return Err(Error::Shape(format!("point has {} entries, set has {n}", z.len())));
    }
    if n > QP_MAX_DIM {
        return Err(Error::DimensionTooLarge { n, max: QP_MAX_DIM });
    }
    let layout = set.layout();
    let m = layout.target_alphabet();
    let eps = set.epsilon().as_f64();

    // Equalities first: adjacent column sums of each block agree, then total mass.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for j in 0..layout.n_parents() {
        let cols = layout.parent_alphabets()[j];
        for c in 0..cols.saturating_sub(1) {
            let mut row = Vec::with_capacity(2 * m);
            for r in 0..m {
                row.push((layout.index(j, r, c), 1.0));
                row.push((layout.index(j, r, c + 1), -1.0));
            }
            rows.push(row);
        }
    }
    let mut mass: Vec<(usize, f64)> = layout.intercept_range().map(|k| (k, 1.0)).collect();
    for j in 0..layout.n_parents() {
        mass.extend((0..m).map(|r| (layout.index(j, r, 0), 1.0)));
    }
    rows.push(mass);
    let meq = rows.len();
    let mut bvec = vec![0.0; meq];
    bvec[meq - 1] = 1.0;

    let n_con = meq + n;
    let mut amat = vec![0.0; n_con * n];
    for (i, row) in rows.iter().enumerate() {
        for &(k, a) in row {
            amat[i * n + k] = a;
        }
    }
    // -x_k <= -ε
    for k in 0..n {
        amat[(meq + k) * n + k] = -1.0;
    }
    bvec.extend(std::iter::repeat_n(-eps, n));

    // Q = I, passed as its (identity) inverse Cholesky factor.
    let mut qmat = vec![0.0; n * n];
    for k in 0..n {
        qmat[k * n + k] = 1.0;
    }
    let cvec: Vec<f64> = z.iter().map(|x| -x.as_f64()).collect();
    let sol = quadprog::solve_qp(&mut qmat, &cvec, &amat, &bvec, meq, true)
        .map_err(|e| Error::Qp(e.to_string()))?;
    Ok(sol.sol.into_iter().map(T::lit).collect())
}
