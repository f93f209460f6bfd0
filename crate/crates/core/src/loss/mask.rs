use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous quality labels for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(y: Vec<f64>) -> Self {
        Self(y)
    }

    /// Labels checked against an inclusive `[lo, hi]` range.
    pub fn with_range(y: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(lo..=hi).contains(*v)) {
            return Err(Error::Config(format!(
                "label {i} = {v} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self(y))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for LabelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Label distance between two samples.
#[inline]
pub fn label_distance(y_j: f64, y_k: f64) -> f64 {
    (y_j - y_k).abs()
}

/// `valid(i, j, k)` holds when the indices are pairwise distinct and `j` is
/// strictly closer to anchor `i` in label space than `k` is.
#[inline]
pub fn is_valid_triplet(y: &[f64], i: usize, j: usize, k: usize) -> bool {
    i != j && j != k && i != k && label_distance(y[i], y[j]) < label_distance(y[i], y[k])
}

/// Dense N×N×N validity table over (anchor, positive, negative).
#[derive(Clone, Debug, PartialEq)]
pub struct TripletMask {
    n: usize,
    valid: Vec<bool>,
    count: usize,
}

impl TripletMask {
    pub fn build(labels: &[f64]) -> Result<Self> {
        let n = labels.len();
        if n < 3 {
            return Err(Error::BatchTooSmall { min: 3, got: n });
        }
        let mut valid = vec![false; n * n * n];
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r_ij = label_distance(labels[i], labels[j]);
                let base = (i * n + j) * n;
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    if r_ij < label_distance(labels[i], labels[k]) {
                        valid[base + k] = true;
                        count += 1;
                    }
                }
            }
        }
        Ok(Self { n, valid, count })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.valid[(i * self.n + j) * self.n + k]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Validity of every negative `k` for the pair (anchor `i`, positive `j`).
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[bool] {
        let base = (i * self.n + j) * self.n;
        &self.valid[base..base + self.n]
    }

    /// All valid (anchor, positive, negative) triples in lexicographic order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.n;
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(idx, _)| (idx / (n * n), (idx / n) % n, idx % n))
    }
}
