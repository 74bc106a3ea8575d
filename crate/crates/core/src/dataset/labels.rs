use rand::Rng;

use crate::error::{Error, Result};

/// Binary `n × L` multi-hot label matrix, one packed bit row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    classes: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl LabelMatrix {
    pub fn new(rows: usize, classes: usize) -> Self {
        let words_per_row = classes.div_ceil(64);
        Self {
            rows,
            classes,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn from_rows(rows: &[Vec<usize>], classes: usize) -> Result<Self> {
        let mut m = Self::new(rows.len(), classes);
        for (i, r) in rows.iter().enumerate() {
            for &l in r {
                if l >= classes {
                    return Err(Error::config(format!(
                        "sample {i} has label {l} but there are only {classes} classes"
                    )));
                }
                m.set(i, l, true);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, row: usize, class: usize) -> bool {
        let w = self.words[row * self.words_per_row + class / 64];
        (w >> (class % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, class: usize, on: bool) {
        let w = &mut self.words[row * self.words_per_row + class / 64];
        if on {
            *w |= 1 << (class % 64);
        } else {
            *w &= !(1 << (class % 64));
        }
    }

    #[inline]
    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Class indices present in a row, ascending.
    pub fn row_labels(&self, row: usize) -> Vec<usize> {
        (0..self.classes).filter(|&l| self.get(row, l)).collect()
    }

    pub fn row_count(&self, row: usize) -> usize {
        self.row_words(row).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of samples carrying each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for i in 0..self.rows {
            for l in self.row_labels(i) {
                counts[l] += 1;
            }
        }
        counts
    }

    /// True when `self[i]` and `other[j]` share at least one label.
    #[inline]
    pub fn shares_label(&self, i: usize, other: &LabelMatrix, j: usize) -> bool {
        self.row_words(i)
            .iter()
            .zip(other.row_words(j))
            .any(|(a, b)| a & b != 0)
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let mut words = Vec::with_capacity(idx.len() * self.words_per_row);
        for &i in idx {
            words.extend_from_slice(self.row_words(i));
        }
        LabelMatrix {
            rows: idx.len(),
            classes: self.classes,
            words_per_row: self.words_per_row,
            words,
        }
    }
}

/// Pairwise similarity: `a_ij = 1` iff sample `i` of one side and sample
/// `j` of the other share a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl AffinityMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j) as u8);
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j] != 0
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j] as f64
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> AffinityMatrix {
        AffinityMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn count_similar(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

pub fn build_affinity(a: &LabelMatrix, b: &LabelMatrix) -> Result<AffinityMatrix> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::shape(
            "build_affinity",
            (a.rows(), a.num_classes()),
            (b.rows(), b.num_classes()),
        ));
    }
    Ok(AffinityMatrix::from_fn(a.rows(), b.rows(), |i, j| a.shares_label(i, b, j)))
}

/// Reduces every row carrying more than `max_keep` labels to a random count
/// in `min_keep..=max_keep`, keeping the globally rarest labels (ties by
/// class index). Rows at or below `max_keep` are untouched.
pub fn trim_labels<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    min_keep: usize,
    max_keep: usize,
    rng: &mut R,
) -> Result<LabelMatrix> {
    if min_keep == 0 || min_keep > max_keep {
        return Err(Error::config(format!(
            "label trimming needs 1 <= min_keep <= max_keep, got {min_keep}..{max_keep}"
        )));
    }
    let counts = labels.class_counts();
    let mut out = labels.clone();
    for i in 0..labels.rows() {
        let mut present = labels.row_labels(i);
        if present.len() <= max_keep {
            continue;
        }
        let keep = rng.random_range(min_keep..=max_keep);
        present.sort_by_key(|&l| (counts[l], l));
        for &l in &present[keep..] {
            out.set(i, l, false);
        }
    }
    Ok(out)
}
