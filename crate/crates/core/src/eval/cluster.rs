use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_euclidean, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            max_iter: 300,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after each update step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_euclidean(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(z: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = z.rows();
    let mut centroids = Matrix::zeros(k, z.cols());
    centroids.row_mut(0).copy_from_slice(z.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_euclidean(z.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(z.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(z.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(z: &Matrix, mut centroids: Matrix, max_iter: usize) -> KMeansResult {
    let (n, d) = z.shape();
    let k = centroids.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(z.row(i), &centroids);
            changed |= assignments[i] != c;
            assignments[i] = c;
            dist[i] = dd;
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point from its centroid, lowest index on ties
            let mut far = None;
            for i in 0..n {
                if counts[assignments[i]] > 1 && far.is_none_or(|f: usize| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            let Some(far) = far else { break };
            counts[assignments[far]] -= 1;
            assignments[far] = c;
            counts[c] = 1;
            dist[far] = 0.0;
            changed = true;
        }
        centroids.fill(0.0);
        for i in 0..n {
            let a = assignments[i];
            for (m, v) in centroids.row_mut(a).iter_mut().zip(z.row(i)) {
                *m += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).iter_mut().for_each(|m| *m /= counts[c] as f64);
            }
        }
        let inertia: f64 = (0..n)
            .map(|i| squared_euclidean(z.row(i), centroids.row(assignments[i])))
            .sum();
        history.push(inertia);
        if !changed {
            break;
        }
    }
    debug_assert_eq!(centroids.cols(), d);
    KMeansResult {
        inertia: *history.last().unwrap_or(&0.0),
        assignments,
        centroids,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia wins. Restart `r` uses stream `r` of a generator seeded by `seed`.
pub fn kmeans(z: &Matrix, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if cfg.k == 0 || cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(Error::Config("k, restarts and max_iter must be >= 1".into()));
    }
    if z.rows() < cfg.k {
        return Err(Error::Config(format!(
            "kmeans needs at least k = {} points, got {}",
            cfg.k,
            z.rows()
        )));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("kmeans input".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let run = lloyd(z, plus_plus(z, cfg.k, &mut rng), cfg.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Class indices in order of first appearance, plus the class count.
fn dense_labels<T: Eq + Hash>(v: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let out = v
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information, `2·I(A;B) / (H(A) + H(B))`.
/// Zero when either partition has a single class.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("nmi", format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Config("nmi of empty partitions".into()));
    }
    let n = a.len() as f64;
    let (ia, ka) = dense_labels(a);
    let (ib, kb) = dense_labels(b);
    if ka < 2 || kb < 2 {
        return Ok(0.0);
    }
    let mut joint = vec![0usize; ka * kb];
    let (mut ca, mut cb) = (vec![0usize; ka], vec![0usize; kb]);
    for (&x, &y) in ia.iter().zip(&ib) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = entropy(ca.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}
