use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// N × 2 projected coordinates.
    pub coords: Matrix,
    /// 2 × d principal directions, one per row.
    pub components: Matrix,
    pub explained_variance: [f64; 2],
    /// The centred data had rank < 2; the second component is zero.
    pub rank_deficient: bool,
}

/// Two-component PCA via eigen-decomposition of the sample covariance.
///
/// Each component's sign is chosen so its largest-magnitude coordinate is
/// positive (first such coordinate on ties).
pub fn pca2(z: &Matrix) -> Result<Pca2> {
    let (n, d) = z.shape();
    if n < 3 || d < 2 {
        return Err(Error::dim("pca2", format!("need N >= 3 and d >= 2, got {n} x {d}")));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("pca2 input".into()));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(r)) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |r, c| z[(r, c)] - mean[c]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let second = eig.eigenvalues[order[1]].max(0.0);
    let rank_deficient = top <= 0.0 || second <= 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut components = Matrix::zeros(2, d);
    let mut explained_variance = [top, second];
    for (slot, &col) in order.iter().take(2).enumerate() {
        if slot == 1 && rank_deficient {
            explained_variance[1] = 0.0;
            break;
        }
        let v = eig.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 1..d {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[(slot, i)] = sign * v[i];
        }
    }
    let mut coords = Matrix::zeros(n, 2);
    for r in 0..n {
        for k in 0..2 {
            coords[(r, k)] = (0..d).map(|c| centred[(r, c)] * components[(k, c)]).sum();
        }
    }
    Ok(Pca2 {
        coords,
        components,
        explained_variance,
        rank_deficient,
    })
}
