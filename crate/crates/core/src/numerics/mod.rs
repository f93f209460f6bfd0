//! Dense matrices, trainable parameters and a small reverse-mode
//! differentiation graph.

mod gradcheck;
mod graph;
mod matrix;
mod param;

pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Var, DIST_EPS};
pub use matrix::{euclidean, pairwise_dist, squared_euclidean, Matrix};
pub use param::Parameter;

/// A sequence of `T` frames, one row per frame.
pub type FeatureSequence = Matrix;

/// Mean over the time axis of a frame sequence.
pub fn mean_pool_time(x: &FeatureSequence) -> crate::Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(crate::Error::EmptySequence);
    }
    let mut out = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    let inv = 1.0 / x.rows() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}
