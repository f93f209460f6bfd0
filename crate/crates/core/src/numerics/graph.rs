//! Record-replay reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is built during the forward pass: every primitive appends a
//! node holding its output and whatever it needs to map an output gradient
//! back to its inputs. [`Graph::backward`] walks the nodes in exact reverse
//! order of creation.

use super::{Matrix, Parameter};
use crate::error::{Error, Result};

/// Guard added under the square root when differentiating Euclidean
/// distances, so the gradient at coincident points is zero instead of NaN.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul { a: Var, b: Var },
    AddRowBias { x: Var, bias: Var },
    Relu { x: Var },
    SegmentMean { x: Var, offsets: Vec<usize> },
    PairwiseDist { z: Var, squared: bool },
    /// Scalar whose local derivative w.r.t. `input` is stored explicitly.
    /// Used by piecewise-linear losses where the active set is fixed once
    /// the forward value is known.
    Linearized { input: Var, local_grad: Matrix },
    MeanSquaredError { pred: Var, target: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A constant input; receives no gradient bookkeeping outside the graph.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// A leaf bound to parameter slot `id`; its gradient is routed back by
    /// [`Gradients::accumulate_into`].
    pub fn param(&mut self, id: usize, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    /// Adds a 1×cols bias to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim(
                "add_row_bias",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBias { x, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(out, Op::Relu { x })
    }

    /// Averages consecutive row blocks: output row `s` is the mean of rows
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if offsets.len() < 2 || *offsets.last().unwrap() != xv.rows() || offsets[0] != 0 {
            return Err(Error::dim(
                "segment_mean",
                format!("offsets do not cover {} rows", xv.rows()),
            ));
        }
        let segments = offsets.len() - 1;
        let mut out = Matrix::zeros(segments, xv.cols());
        for s in 0..segments {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo {
                return Err(Error::EmptySequence);
            }
            let inv = 1.0 / (hi - lo) as f64;
            let row = out.row_mut(s);
            for r in lo..hi {
                for (o, v) in row.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            row.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                offsets: offsets.to_vec(),
            },
        ))
    }

    pub fn pairwise_dist(&mut self, z: Var, squared: bool) -> Result<Var> {
        let zv = self.value(z);
        if zv.rows() < 2 {
            return Err(Error::BatchTooSmall {
                min: 2,
                got: zv.rows(),
            });
        }
        let out = super::pairwise_dist(zv, squared);
        Ok(self.push(out, Op::PairwiseDist { z, squared }))
    }

    /// Records a scalar `value` whose gradient w.r.t. `input` is `local_grad`.
    pub fn linearized(&mut self, input: Var, value: f64, local_grad: Matrix) -> Result<Var> {
        if local_grad.shape() != self.value(input).shape() {
            return Err(Error::dim(
                "linearized",
                format!(
                    "local gradient {:?} for input {:?}",
                    local_grad.shape(),
                    self.value(input).shape()
                ),
            ));
        }
        Ok(self.push(Matrix::filled(1, 1, value), Op::Linearized { input, local_grad }))
    }

    /// Mean over all entries of `(pred - target)²`.
    pub fn mse(&mut self, pred: Var, target: Matrix) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.data().is_empty() {
            return Err(Error::dim(
                "mse",
                format!("prediction {:?} vs target {:?}", pv.shape(), target.shape()),
            ));
        }
        let n = pv.data().len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(Matrix::filled(1, 1, loss), Op::MeanSquaredError { pred, target }))
    }

    /// Back-propagates from a 1×1 output. Nodes are visited in exact reverse
    /// creation order.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::dim(
                "backward",
                format!("output must be scalar, got {:?}", out.shape()),
            ));
        }
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", out[(0, 0)])));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.matmul_t(bv)?;
                    let db = av.t_matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddRowBias { x, bias } => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, db)?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SegmentMean { x, offsets } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        let inv = 1.0 / (hi - lo) as f64;
                        let gs = g.row(s);
                        for r in lo..hi {
                            for (d, v) in dx.row_mut(r).iter_mut().zip(gs) {
                                *d = v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::PairwiseDist { z, squared } => {
                    let zv = self.value(*z);
                    let dist = &node.value;
                    let (n, d) = zv.shape();
                    let mut dz = Matrix::zeros(n, d);
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            // D is symmetric, so both (i,j) and (j,i) feed row i.
                            let gij = g[(i, j)] + g[(j, i)];
                            if gij == 0.0 {
                                continue;
                            }
                            let coef = if *squared {
                                2.0 * gij
                            } else {
                                let sq = dist[(i, j)] * dist[(i, j)];
                                gij / (sq + DIST_EPS).sqrt()
                            };
                            let (zi, zj) = (zv.row(i), zv.row(j));
                            let diff: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
                            for (o, df) in dz.row_mut(i).iter_mut().zip(&diff) {
                                *o += coef * df;
                            }
                        }
                    }
                    accumulate(&mut grads, *z, dz)?;
                }
                Op::Linearized { input, local_grad } => {
                    let mut dx = local_grad.clone();
                    dx.scale(g[(0, 0)]);
                    accumulate(&mut grads, *input, dx)?;
                }
                Op::MeanSquaredError { pred, target } => {
                    let pv = self.value(*pred);
                    let n = pv.data().len() as f64;
                    let scale = 2.0 * g[(0, 0)] / n;
                    let dx = Matrix::from_vec(
                        pv.rows(),
                        pv.cols(),
                        pv.data()
                            .iter()
                            .zip(target.data())
                            .map(|(p, t)| scale * (p - t))
                            .collect(),
                    )?;
                    accumulate(&mut grads, *pred, dx)?;
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((i, p)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar output w.r.t. every leaf of a [`Graph`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient w.r.t. a leaf. `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter-leaf gradient into `params[id].grad`.
    pub fn accumulate_into(&self, params: &mut [Parameter]) -> Result<()> {
        for &(node, id) in &self.params {
            let Some(g) = &self.grads[node] else {
                continue;
            };
            let p = params
                .get_mut(id)
                .ok_or_else(|| Error::dim("accumulate_into", format!("no parameter {id}")))?;
            if p.grad.shape() != p.value.shape() {
                p.zero_grad();
            }
            p.grad.add_assign(g)?;
        }
        Ok(())
    }
}
