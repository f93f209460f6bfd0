//! Batch-all triplet losses over continuous labels.
//!
//! Every valid triplet `(i, j, k)` of the batch contributes
//! `max(0, D_ij - D_ik + margin)` where `D` is the non-squared Euclidean
//! distance between embeddings. The margin is either a constant or derived
//! from the label gap of the triplet.

use serde::{Deserialize, Serialize};

use super::mask::{label_distance, TripletMask};
use crate::error::{Error, Result};
use crate::numerics::{pairwise_dist, Graph, Matrix, Parameter, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    Fixed,
    Adaptive,
}

/// Orientation of the adaptive margin.
///
/// `Intuitive` uses `(|y_i - y_k| - |y_i - y_j|) / kappa`, positive on every
/// valid triplet. `Literal` uses the opposite sign,
/// `(|y_i - y_j| - |y_i - y_k|) / kappa`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    #[default]
    Intuitive,
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub mode: MarginMode,
    /// Constant margin; ignored in adaptive mode.
    pub m: f64,
    /// Divisor for the label gap; ignored in fixed mode.
    pub kappa: f64,
    pub sign_mode: SignMode,
}

impl MarginSpec {
    pub fn fixed(m: f64) -> Self {
        Self {
            mode: MarginMode::Fixed,
            m,
            kappa: 4.0,
            sign_mode: SignMode::Intuitive,
        }
    }

    /// Adaptive margin normalised by `kappa` (the label span by default).
    pub fn adaptive(kappa: f64) -> Self {
        Self {
            mode: MarginMode::Adaptive,
            m: 0.0,
            kappa,
            sign_mode: SignMode::Intuitive,
        }
    }

    pub fn with_sign_mode(mut self, sign_mode: SignMode) -> Self {
        self.sign_mode = sign_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            MarginMode::Fixed if !(self.m >= 0.0 && self.m.is_finite()) => {
                Err(Error::Config(format!("fixed margin must be >= 0, got {}", self.m)))
            }
            MarginMode::Adaptive if !(self.kappa > 0.0 && self.kappa.is_finite()) => {
                Err(Error::Config(format!("kappa must be > 0, got {}", self.kappa)))
            }
            _ => Ok(()),
        }
    }

    /// Margin for anchor `y_i`, positive `y_j`, negative `y_k`.
    #[inline]
    pub fn margin(&self, y_i: f64, y_j: f64, y_k: f64) -> f64 {
        match self.mode {
            MarginMode::Fixed => self.m,
            MarginMode::Adaptive => {
                let gap = label_distance(y_i, y_k) - label_distance(y_i, y_j);
                match self.sign_mode {
                    SignMode::Intuitive => gap / self.kappa,
                    SignMode::Literal => -gap / self.kappa,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum of hinged terms divided by the number of active triplets.
    #[default]
    MeanActive,
    /// Raw sum of hinged terms.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub value: f64,
    /// Triplets whose hinged term is strictly positive.
    pub active_triplets: usize,
    pub valid_triplets: usize,
    pub reduction: Reduction,
    /// Set when the batch had no valid triplet at all.
    pub no_valid_triplets: bool,
}

/// Hinged triplet term. Positive exactly when the triplet is active.
#[cfg(test)]
fn term(d: &Matrix, i: usize, j: usize, k: usize, margin: f64) -> f64 {
    d[(i, j)] - d[(i, k)] + margin
}

/// Loss value and its gradient w.r.t. the distance matrix.
///
/// The loss is piecewise linear in `D`, so the returned gradient is exact
/// everywhere off the hinge kinks.
pub fn scoreq_from_distances(
    dist: &Matrix,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<(LossOutput, Matrix)> {
    spec.validate()?;
    let n = labels.len();
    if dist.shape() != (n, n) {
        return Err(Error::dim(
            "scoreq",
            format!("distance matrix {:?} for {n} labels", dist.shape()),
        ));
    }
    let mask = TripletMask::build(labels)?;
    let mut sum = 0.0;
    let mut active = 0usize;
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let d_i = dist.row(i);
        for j in 0..n {
            let mut pos_count = 0.0;
            for (k, _) in mask.row(i, j).iter().enumerate().filter(|(_, v)| **v) {
                let t = d_i[j] - d_i[k] + spec.margin(labels[i], labels[j], labels[k]);
                if t > 0.0 {
                    sum += t;
                    active += 1;
                    pos_count += 1.0;
                    grad[(i, k)] -= 1.0;
                }
            }
            grad[(i, j)] += pos_count;
        }
    }
    let value = match reduction {
        Reduction::Sum => sum,
        Reduction::MeanActive if active > 0 => {
            grad.scale(1.0 / active as f64);
            sum / active as f64
        }
        Reduction::MeanActive => 0.0,
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("triplet loss {value}")));
    }
    let valid = mask.count();
    if valid == 0 {
        log::warn!("batch of {n} has no valid triplets");
    }
    Ok((
        LossOutput {
            value,
            active_triplets: active,
            valid_triplets: valid,
            reduction,
            no_valid_triplets: valid == 0,
        },
        grad,
    ))
}

/// Records the batch-all loss on `g` for embeddings `z`.
pub fn scoreq_on_graph(
    g: &mut Graph,
    z: Var,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<(Var, LossOutput)> {
    let d = g.pairwise_dist(z, false)?;
    let (out, local) = scoreq_from_distances(g.value(d), labels, spec, reduction)?;
    let v = g.linearized(d, out.value, local)?;
    Ok((v, out))
}

fn check_mode(spec: &MarginSpec, expected: MarginMode) -> Result<()> {
    if spec.mode != expected {
        return Err(Error::Config(format!(
            "expected a {expected:?} margin, got {:?}",
            spec.mode
        )));
    }
    Ok(())
}

/// Batch-all loss with a constant margin on embeddings `z` (one row per sample).
pub fn scoreq_fixed(
    z: &Matrix,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<LossOutput> {
    check_mode(spec, MarginMode::Fixed)?;
    scoreq_value(z, labels, spec, reduction)
}

/// Batch-all loss with a label-gap margin on embeddings `z`.
pub fn scoreq_adaptive(
    z: &Matrix,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<LossOutput> {
    check_mode(spec, MarginMode::Adaptive)?;
    scoreq_value(z, labels, spec, reduction)
}

fn scoreq_value(
    z: &Matrix,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<LossOutput> {
    if z.rows() != labels.len() {
        return Err(Error::dim(
            "scoreq",
            format!("{} embeddings for {} labels", z.rows(), labels.len()),
        ));
    }
    let dist = pairwise_dist(z, false);
    scoreq_from_distances(&dist, labels, spec, reduction).map(|(out, _)| out)
}

/// Loss value and its gradient w.r.t. the embeddings, for either margin mode.
pub fn scoreq_with_grad(
    z: &Matrix,
    labels: &[f64],
    spec: &MarginSpec,
    reduction: Reduction,
) -> Result<(LossOutput, Matrix)> {
    let mut params = [Parameter::new("z", z.clone())];
    let mut g = Graph::new();
    let zv = g.param(0, z);
    let (loss, out) = scoreq_on_graph(&mut g, zv, labels, spec, reduction)?;
    g.backward(loss)?.accumulate_into(&mut params)?;
    let [p] = params;
    Ok((out, p.grad))
}

/// True when the triplet `(i, j, k)` with embeddings `z_i, z_j, z_k` still
/// produces a gradient: `||z_i - z_j|| + margin > ||z_i - z_k||`.
pub fn adaptive_grad_condition(
    z_i: &[f64],
    z_j: &[f64],
    z_k: &[f64],
    labels: (f64, f64, f64),
    spec: &MarginSpec,
) -> bool {
    let d_ij = crate::numerics::euclidean(z_i, z_j);
    let d_ik = crate::numerics::euclidean(z_i, z_k);
    d_ij - d_ik + spec.margin(labels.0, labels.1, labels.2) > 0.0
}

/// Closed-form gradient of one triplet term w.r.t. the anchor embedding:
/// `(z_i - z_j)/||z_i - z_j|| - (z_i - z_k)/||z_i - z_k||` while the
/// condition holds, zero otherwise.
pub fn anchor_gradient(
    z_i: &[f64],
    z_j: &[f64],
    z_k: &[f64],
    labels: (f64, f64, f64),
    spec: &MarginSpec,
) -> Vec<f64> {
    if !adaptive_grad_condition(z_i, z_j, z_k, labels, spec) {
        return vec![0.0; z_i.len()];
    }
    let eps = crate::numerics::DIST_EPS;
    let d_ij = (crate::numerics::squared_euclidean(z_i, z_j) + eps).sqrt();
    let d_ik = (crate::numerics::squared_euclidean(z_i, z_k) + eps).sqrt();
    z_i.iter()
        .zip(z_j)
        .zip(z_k)
        .map(|((a, p), n)| (a - p) / d_ij - (a - n) / d_ik)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: explicit triple loop with per-pair norms.
    fn brute_force(z: &Matrix, y: &[f64], spec: &MarginSpec, reduction: Reduction) -> f64 {
        let n = y.len();
        let norm = |a: usize, b: usize| -> f64 {
            let mut s = 0.0;
            for c in 0..z.cols() {
                s += (z[(a, c)] - z[(b, c)]).powi(2);
            }
            s.sqrt()
        };
        let (mut sum, mut active) = (0.0, 0);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i == j || j == k || i == k {
                        continue;
                    }
                    if !((y[i] - y[j]).abs() < (y[i] - y[k]).abs()) {
                        continue;
                    }
                    let margin = match spec.mode {
                        MarginMode::Fixed => spec.m,
                        MarginMode::Adaptive => {
                            let gap = (y[i] - y[k]).abs() - (y[i] - y[j]).abs();
                            match spec.sign_mode {
                                SignMode::Intuitive => gap / spec.kappa,
                                SignMode::Literal => -gap / spec.kappa,
                            }
                        }
                    };
                    let t = norm(i, j) - norm(i, k) + margin;
                    if t > 0.0 {
                        sum += t;
                        active += 1;
                    }
                }
            }
        }
        match reduction {
            Reduction::Sum => sum,
            Reduction::MeanActive if active > 0 => sum / active as f64,
            Reduction::MeanActive => 0.0,
        }
    }

    fn random_z(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(1.0..5.0)).collect()
    }

    #[test]
    fn identical_embeddings_fixed_margin() {
        let z = Matrix::zeros(5, 3);
        let y = [1.0, 2.0, 3.5, 4.0, 5.0];
        let out = scoreq_fixed(&z, &y, &MarginSpec::fixed(0.5), Reduction::MeanActive).unwrap();
        assert_eq!(out.value, 0.5);
        assert_eq!(out.active_triplets, out.valid_triplets);
    }

    #[test]
    fn all_easy_triplets() {
        // Embeddings on a line at 100·y: every negative is much farther away.
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let z = Matrix::from_rows(&y.iter().map(|v| [100.0 * v]).collect::<Vec<_>>()).unwrap();
        let out = scoreq_fixed(&z, &y, &MarginSpec::fixed(0.5), Reduction::MeanActive).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.active_triplets, 0);
        assert!(out.valid_triplets > 0);
    }

    #[test]
    fn adaptive_margin_on_three_sample_batch() {
        let spec = MarginSpec::adaptive(4.0);
        assert_eq!(spec.margin(4.5, 2.0, 1.5), 0.125);
        let literal = spec.with_sign_mode(SignMode::Literal);
        assert_eq!(literal.margin(4.5, 2.0, 1.5), -0.125);
    }

    #[test]
    fn identical_embeddings_adaptive_is_mean_margin() {
        let y = [1.0, 1.5, 2.75, 4.0, 4.5, 5.0];
        let spec = MarginSpec::adaptive(4.0);
        let out = scoreq_adaptive(&Matrix::zeros(6, 2), &y, &spec, Reduction::MeanActive).unwrap();
        let mask = TripletMask::build(&y).unwrap();
        let margins: Vec<f64> = mask
            .triplets()
            .map(|(i, j, k)| spec.margin(y[i], y[j], y[k]))
            .collect();
        let mean = margins.iter().sum::<f64>() / margins.len() as f64;
        assert!((out.value - mean).abs() < 1e-12);
    }

    #[test]
    fn no_valid_triplets_is_flagged_not_error() {
        let out = scoreq_fixed(&Matrix::zeros(3, 2), &[2.0; 3], &MarginSpec::fixed(0.5), Reduction::MeanActive)
            .unwrap();
        assert!(out.no_valid_triplets);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.active_triplets, 0);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let z = Matrix::zeros(3, 2);
        assert!(scoreq_fixed(&z, &[1.0, 2.0, 3.0], &MarginSpec::adaptive(4.0), Reduction::Sum).is_err());
        assert!(scoreq_adaptive(&z, &[1.0, 2.0, 3.0], &MarginSpec::fixed(0.1), Reduction::Sum).is_err());
        assert!(MarginSpec::adaptive(0.0).validate().is_err());
        assert!(MarginSpec::fixed(-1.0).validate().is_err());
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let z = random_z(&mut rng, 6, 4);
            let y = random_labels(&mut rng, 6);
            for reduction in [Reduction::MeanActive, Reduction::Sum] {
                let spec = MarginSpec::fixed(0.3);
                let got = scoreq_fixed(&z, &y, &spec, reduction).unwrap().value;
                assert!((got - brute_force(&z, &y, &spec, reduction)).abs() < 1e-10);
                for sign in [SignMode::Intuitive, SignMode::Literal] {
                    let spec = MarginSpec::adaptive(4.0).with_sign_mode(sign);
                    let got = scoreq_adaptive(&z, &y, &spec, reduction).unwrap().value;
                    assert!((got - brute_force(&z, &y, &spec, reduction)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_z(&mut rng, 4, 3);
            let y = random_labels(&mut rng, 4);
            for spec in [MarginSpec::fixed(0.3), MarginSpec::adaptive(4.0)] {
                for reduction in [Reduction::MeanActive, Reduction::Sum] {
                    let (_, grad) = scoreq_with_grad(&z, &y, &spec, reduction).unwrap();
                    let mut params = vec![Parameter::new("z", z.clone())];
                    params[0].grad = grad;
                    let err = finite_diff_check(&mut params, 1e-5, |p| {
                        scoreq_value(&p[0].value, &y, &spec, reduction).map(|o| o.value)
                    })
                    .unwrap();
                    assert!(err < 1e-4, "seed {seed} {spec:?} {reduction:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn easy_triplets_have_zero_gradient() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let z = Matrix::from_rows(&y.iter().map(|v| [100.0 * v, 0.0]).collect::<Vec<_>>()).unwrap();
        let (out, grad) = scoreq_with_grad(&z, &y, &MarginSpec::adaptive(4.0), Reduction::MeanActive).unwrap();
        assert_eq!(out.active_triplets, 0);
        assert!(grad.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn condition_examples() {
        let origin = [0.0, 0.0];
        let spec = MarginSpec::adaptive(4.0);
        assert!(adaptive_grad_condition(&origin, &origin, &origin, (4.5, 2.0, 1.5), &spec));
        assert!(!adaptive_grad_condition(&origin, &origin, &[100.0, 0.0], (4.5, 2.0, 1.5), &spec));
    }

    #[test]
    fn condition_matches_autodiff_indicator() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = MarginSpec::adaptive(4.0);
        for _ in 0..200 {
            let z = random_z(&mut rng, 3, 3);
            // Labels make (0, 1, 2) the only valid triplet with anchor 0.
            let y = [1.0, 1.0 + rng.random_range(0.1..1.5), 5.0];
            let (i, j, k) = (0, 1, 2);
            let mut g = Graph::new();
            let zv = g.param(0, &z);
            let d = g.pairwise_dist(zv, false).unwrap();
            let t = term(g.value(d), i, j, k, spec.margin(y[i], y[j], y[k]));
            let mut local = Matrix::zeros(3, 3);
            if t > 0.0 {
                local[(i, j)] = 1.0;
                local[(i, k)] = -1.0;
            }
            let out = g.linearized(d, t.max(0.0), local).unwrap();
            let grads = g.backward(out).unwrap();
            let anchor_grad = grads.get(zv).unwrap().row(i).to_vec();
            let nonzero = anchor_grad.iter().any(|v| *v != 0.0);
            let cond = adaptive_grad_condition(z.row(i), z.row(j), z.row(k), (y[i], y[j], y[k]), &spec);
            assert_eq!(cond, nonzero);
            let closed = anchor_gradient(z.row(i), z.row(j), z.row(k), (y[i], y[j], y[k]), &spec);
            for (a, b) in closed.iter().zip(&anchor_grad) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn dyadic_batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..33).prop_map(|q| 1.0 + q as f64 / 8.0), n),
                prop::collection::vec(-2.0f64..2.0, n * 3),
            )
        })
    }

    proptest! {
        #[test]
        fn label_shift_is_bit_identical((y, zs) in dyadic_batch(), shift in -3i32..3) {
            let n = y.len();
            let z = Matrix::from_vec(n, 3, zs).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + shift as f64).collect();
            prop_assert_eq!(TripletMask::build(&y).unwrap(), TripletMask::build(&shifted).unwrap());
            for spec in [MarginSpec::fixed(0.2), MarginSpec::adaptive(4.0)] {
                let a = scoreq_with_grad(&z, &y, &spec, Reduction::MeanActive).unwrap();
                let b = scoreq_with_grad(&z, &shifted, &spec, Reduction::MeanActive).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn permutation_invariant((y, zs) in dyadic_batch(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = y.len();
            let z = Matrix::from_vec(n, 3, zs).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let yp: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
            let zp = z.select_rows(&perm);
            let spec = MarginSpec::adaptive(4.0);
            let a = scoreq_adaptive(&z, &y, &spec, Reduction::MeanActive).unwrap();
            let b = scoreq_adaptive(&zp, &yp, &spec, Reduction::MeanActive).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert_eq!(a.active_triplets, b.active_triplets);
        }

        #[test]
        fn zero_margin_sum_is_hinged_distance_gap(n in 3usize..=12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Distinct labels.
            let y: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.3).collect();
            let z = random_z(&mut rng, n, 2);
            let spec = MarginSpec::fixed(0.0);
            let got = scoreq_fixed(&z, &y, &spec, Reduction::Sum).unwrap().value;
            prop_assert!((got - brute_force(&z, &y, &spec, Reduction::Sum)).abs() < 1e-10);
        }

        #[test]
        fn counts_are_bounded(n in 3usize..=10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = random_labels(&mut rng, n);
            let z = random_z(&mut rng, n, 2);
            let out = scoreq_fixed(&z, &y, &MarginSpec::fixed(0.1), Reduction::MeanActive).unwrap();
            prop_assert!(out.active_triplets <= out.valid_triplets);
            prop_assert!(out.valid_triplets <= n * (n - 1) * (n - 2));
            prop_assert!(out.value >= 0.0);
        }
    }
}
