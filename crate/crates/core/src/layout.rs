use std::ops::Range;

/// Position of each parameter of one target series inside a stacked vector.
///
/// The stacked vector is `[z0, vec(Z^1), ..., vec(Z^d)]` where `z0` has
/// `target_alphabet` entries and each `Z^j` is stored row-major with shape
/// `target_alphabet x parent_alphabets[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    target_alphabet: usize,
    parent_alphabets: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl ParamLayout {
    pub fn new(target_alphabet: usize, parent_alphabets: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(parent_alphabets.len());
        let mut pos = target_alphabet;
        for &m in parent_alphabets {
            offsets.push(pos);
            pos += target_alphabet * m;
        }
        Self {
            target_alphabet,
            parent_alphabets: parent_alphabets.to_vec(),
            offsets,
            len: pos,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn target_alphabet(&self) -> usize {
        self.target_alphabet
    }

    pub fn parent_alphabets(&self) -> &[usize] {
        &self.parent_alphabets
    }

    pub fn n_parents(&self) -> usize {
        self.parent_alphabets.len()
    }

    pub fn intercept_range(&self) -> Range<usize> {
        0..self.target_alphabet
    }

    pub fn block_range(&self, j: usize) -> Range<usize> {
        let start = self.offsets[j];
        start..start + self.target_alphabet * self.parent_alphabets[j]
    }

    #[inline]
    pub fn index(&self, j: usize, row: usize, col: usize) -> usize {
        self.offsets[j] + row * self.parent_alphabets[j] + col
    }
}
