use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::label_distance;
use super::scoreq::{LossOutput, Reduction};
use crate::error::{Error, Result};
use crate::numerics::{squared_euclidean, Graph, Matrix, Var};

/// Classification-style triplet loss over explicit anchor/positive/negative
/// rows: `Σ max(0, ||a - p||² - ||a - n||² + m)` with squared norms.
pub fn triplet_loss_classification(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    m: f64,
) -> Result<f64> {
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(Error::dim(
            "triplet_loss_classification",
            format!(
                "{:?} / {:?} / {:?}",
                anchors.shape(),
                positives.shape(),
                negatives.shape()
            ),
        ));
    }
    Ok((0..anchors.rows())
        .map(|i| {
            let ap = squared_euclidean(anchors.row(i), positives.row(i));
            let an = squared_euclidean(anchors.row(i), negatives.row(i));
            (ap - an + m).max(0.0)
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Precomputes "hard" triplets: for each sampled anchor, the `per_anchor`
/// valid (positive, negative) pairs with the smallest label-distance gap
/// `|y_a - y_n| - |y_a - y_p|`, ties broken by ascending `(p, n)`.
///
/// Anchors are a seeded random subset of size `anchors` (capped at the
/// dataset size). Anchors without any valid pair are skipped.
pub fn offline_hard_triplets(
    labels: &[f64],
    anchors: usize,
    per_anchor: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if labels.len() < 3 {
        return Err(Error::BatchTooSmall {
            min: 3,
            got: labels.len(),
        });
    }
    if per_anchor == 0 {
        return Err(Error::Config("per_anchor must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(anchors.min(labels.len()));

    let mut out = Vec::with_capacity(order.len() * per_anchor);
    for a in order {
        let pairs = hardest_pairs(labels, a, per_anchor);
        if pairs.is_empty() {
            log::warn!("anchor {a} has no valid triplet; skipped");
        }
        out.extend(pairs.into_iter().map(|(p, n)| Triplet {
            anchor: a,
            positive: p,
            negative: n,
        }));
    }
    Ok(out)
}

/// k-way merge over positives: with the other samples sorted by
/// (label distance to the anchor, index), each positive `p` yields its
/// candidate negatives in ascending (gap, n) order.
fn hardest_pairs(labels: &[f64], anchor: usize, limit: usize) -> Vec<(usize, usize)> {
    let ya = labels[anchor];
    let mut sorted: Vec<(f64, usize)> = (0..labels.len())
        .filter(|&i| i != anchor)
        .map(|i| (label_distance(ya, labels[i]), i))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // First position whose distance is strictly greater than position q's.
    let mut next_greater = vec![sorted.len(); sorted.len()];
    for q in (0..sorted.len()).rev() {
        if q + 1 < sorted.len() {
            next_greater[q] = if sorted[q + 1].0 > sorted[q].0 {
                q + 1
            } else {
                next_greater[q + 1]
            };
        }
    }

    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Key(OrdF64, usize, usize);
    #[derive(PartialEq, PartialOrd)]
    struct OrdF64(f64);
    impl Eq for OrdF64 {}
    impl Ord for OrdF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    // Heap entries: (gap, p, n, p position, n position).
    let mut heap = BinaryHeap::new();
    for (qp, &(rp, p)) in sorted.iter().enumerate() {
        let qn = next_greater[qp];
        if qn < sorted.len() {
            let (rn, n) = sorted[qn];
            heap.push(Reverse((Key(OrdF64(rn - rp), p, n), qp, qn)));
        }
    }
    let mut out = Vec::with_capacity(limit);
    while out.len() < limit {
        let Some(Reverse((Key(_, p, n), qp, qn))) = heap.pop() else {
            break;
        };
        out.push((p, n));
        if qn + 1 < sorted.len() {
            let (rn, n2) = sorted[qn + 1];
            heap.push(Reverse((Key(OrdF64(rn - sorted[qp].0), p, n2), qp, qn + 1)));
        }
    }
    out
}

/// Hinge loss over an explicit list of `(anchor, positive, negative)` rows of
/// `z` with a constant margin and non-squared distances.
pub fn triplet_list_on_graph(
    g: &mut Graph,
    z: Var,
    triplets: &[(usize, usize, usize)],
    margin: f64,
    reduction: Reduction,
) -> Result<(Var, LossOutput)> {
    let d = g.pairwise_dist(z, false)?;
    let dist = g.value(d);
    let n = dist.rows();
    let mut local = Matrix::zeros(n, n);
    let (mut sum, mut active) = (0.0, 0usize);
    for &(i, j, k) in triplets {
        if i >= n || j >= n || k >= n {
            return Err(Error::dim("triplet_list", format!("index out of {n} rows")));
        }
        let t = dist[(i, j)] - dist[(i, k)] + margin;
        if t > 0.0 {
            sum += t;
            active += 1;
            local[(i, j)] += 1.0;
            local[(i, k)] -= 1.0;
        }
    }
    let value = match reduction {
        Reduction::Sum => sum,
        Reduction::MeanActive if active > 0 => {
            local.scale(1.0 / active as f64);
            sum / active as f64
        }
        Reduction::MeanActive => 0.0,
    };
    let v = g.linearized(d, value, local)?;
    Ok((
        v,
        LossOutput {
            value,
            active_triplets: active,
            valid_triplets: triplets.len(),
            reduction,
            no_valid_triplets: triplets.is_empty(),
        },
    ))
}
