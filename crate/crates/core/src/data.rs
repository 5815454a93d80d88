//! Categorical time series, lagged transition pairs and estimated graphs.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A `T x d` matrix of category indices with one alphabet per series.
///
/// Immutable once validated: every value is below its column's alphabet size
/// and there are at least two time points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoricalDataset {
    values: Vec<usize>,
    n_times: usize,
    n_series: usize,
    alphabet_sizes: Vec<usize>,
}

impl CategoricalDataset {
    pub fn new(raw: &[Vec<usize>], alphabet_sizes: Option<&[usize]>) -> Result<Self> {
        validate_dataset(raw, alphabet_sizes)
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_series(&self) -> usize {
        self.n_series
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    pub fn alphabet_size(&self, series: usize) -> usize {
        self.alphabet_sizes[series]
    }

    #[inline]
    pub fn value(&self, t: usize, series: usize) -> usize {
        self.values[t * self.n_series + series]
    }

    pub fn row(&self, t: usize) -> &[usize] {
        &self.values[t * self.n_series..(t + 1) * self.n_series]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.values.chunks(self.n_series)
    }

    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.rows().map(<[usize]>::to_vec).collect()
    }

    /// Number of lagged `(x_{t-1}, x_t)` pairs, `T - 1`.
    pub fn n_transitions(&self) -> usize {
        self.n_times - 1
    }
}

/// Validates a raw integer matrix.
///
/// When `alphabet_sizes` is `None` each size is inferred as `1 + max` of its
/// column, raised to 2 so a constant column still has a proper alphabet.
pub fn validate_dataset(
    raw: &[Vec<usize>],
    alphabet_sizes: Option<&[usize]>,
) -> Result<CategoricalDataset> {
    let first = raw.first().ok_or(Error::Empty)?;
    let n_series = first.len();
    if n_series == 0 {
        return Err(Error::Empty);
    }
    for (row, r) in raw.iter().enumerate() {
        if r.len() != n_series {
            return Err(Error::Ragged {
                row,
                found: r.len(),
                expected: n_series,
            });
        }
    }
    let sizes: Vec<usize> = match alphabet_sizes {
        Some(s) => {
            if s.len() != n_series {
                return Err(Error::Shape(format!(
                    "{} alphabet sizes for {n_series} series",
                    s.len()
                )));
            }
            s.to_vec()
        }
        None => (0..n_series)
            .map(|j| raw.iter().map(|r| r[j]).max().unwrap_or(0).max(1) + 1)
            .collect(),
    };
    for (series, &size) in sizes.iter().enumerate() {
        if size < 2 {
            return Err(Error::AlphabetTooSmall { series, size });
        }
    }
    for (row, r) in raw.iter().enumerate() {
        for (col, &value) in r.iter().enumerate() {
            if value >= sizes[col] {
                return Err(Error::IndexOutOfRange {
                    row,
                    col,
                    value,
                    alphabet: sizes[col],
                });
            }
        }
    }
    if raw.len() < 2 {
        return Err(Error::TooShort(raw.len()));
    }
    Ok(CategoricalDataset {
        values: raw.iter().flatten().copied().collect(),
        n_times: raw.len(),
        n_series,
        alphabet_sizes: sizes,
    })
}

/// One lagged observation for a fixed target series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionSample<'a> {
    pub target: usize,
    pub context: &'a [usize],
}

/// The `(x_{t-1}, x_{it})` pairs seen by the per-series likelihood of series `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionSet {
    target_series: usize,
    target_alphabet: usize,
    alphabet_sizes: Vec<usize>,
    targets: Vec<usize>,
    contexts: Vec<usize>,
}

impl TransitionSet {
    pub fn target_series(&self) -> usize {
        self.target_series
    }

    pub fn target_alphabet(&self) -> usize {
        self.target_alphabet
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    pub fn n_series(&self) -> usize {
        self.alphabet_sizes.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn get(&self, k: usize) -> TransitionSample<'_> {
        let d = self.n_series();
        TransitionSample {
            target: self.targets[k],
            context: &self.contexts[k * d..(k + 1) * d],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TransitionSample<'_>> + '_ {
        self.targets
            .iter()
            .zip(self.contexts.chunks(self.n_series().max(1)))
            .map(|(&target, context)| TransitionSample { target, context })
    }

    /// Keeps only the samples at the given positions, in the given order.
    pub fn subset(&self, positions: impl IntoIterator<Item = usize>) -> Self {
        let d = self.n_series();
        let mut targets = Vec::new();
        let mut contexts = Vec::new();
        for k in positions {
            targets.push(self.targets[k]);
            contexts.extend_from_slice(&self.contexts[k * d..(k + 1) * d]);
        }
        Self {
            target_series: self.target_series,
            target_alphabet: self.target_alphabet,
            alphabet_sizes: self.alphabet_sizes.clone(),
            targets,
            contexts,
        }
    }

    /// Count of each target category.
    pub fn target_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.target_alphabet];
        for &a in &self.targets {
            counts[a] += 1;
        }
        counts
    }
}

/// Builds the `T - 1` transition samples whose target is series `target`.
///
/// Sample `t` has `context = row t` and `target = values[t + 1][target]`.
pub fn transition_pairs(data: &CategoricalDataset, target: usize) -> TransitionSet {
    assert!(target < data.n_series(), "target series out of range");
    let n = data.n_transitions();
    let targets = (0..n).map(|t| data.value(t + 1, target)).collect();
    let contexts = data.values[..n * data.n_series].to_vec();
    TransitionSet {
        target_series: target,
        target_alphabet: data.alphabet_size(target),
        alphabet_sizes: data.alphabet_sizes.clone(),
        targets,
        contexts,
    }
}

/// A conditional distribution `p(x_{it} | x_{t-1})` for one target series.
pub trait TransitionModel<T> {
    fn target_alphabet(&self) -> usize;

    /// Probability vector over the target alphabet given the lagged row.
    fn cond_prob(&self, context: &[usize]) -> Vec<T>;
}

/// Estimated Granger network: `weights[(i, j)]` is the strength of edge `j -> i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrangerGraph<T> {
    weights: Matrix<T>,
    adjacency: Vec<bool>,
    threshold: T,
}

impl<T: Scalar> GrangerGraph<T> {
    /// Thresholds a nonnegative weight matrix; an edge needs `weight > threshold`.
    pub fn from_weights(weights: Matrix<T>, threshold: T) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::Shape("graph weights must be square".into()));
        }
        if let Some(w) = weights.as_slice().iter().find(|w| !(**w >= T::zero())) {
            return Err(Error::Shape(format!("negative or NaN edge weight {w}")));
        }
        let adjacency = weights.as_slice().iter().map(|&w| w > threshold).collect();
        Ok(Self {
            weights,
            adjacency,
            threshold,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn weight(&self, target: usize, source: usize) -> T {
        self.weights[(target, source)]
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// Whether `source` Granger-causes `target` in the thresholded graph.
    pub fn has_edge(&self, target: usize, source: usize) -> bool {
        self.adjacency[target * self.n_nodes() + source]
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        self.adjacency
            .chunks(self.n_nodes().max(1))
            .map(<[bool]>::to_vec)
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_count() == 0
    }
}
