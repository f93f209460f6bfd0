//! Frame encoder `g`, projection head `f` and the linear MOS head.
//!
//! The encoder is a per-frame stack of linear+ReLU layers followed by a mean
//! over time, producing the representation `h`. The projection head maps
//! `relu(h)` to the embedding `z` on which the triplet losses act. The MOS
//! head reads `h` directly.

mod checkpoint;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{euclidean, FeatureSequence, Graph, Matrix, Parameter, Var};

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub mos_head: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            embed_dim: 256,
            mos_head: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("input_dim and embed_dim must be >= 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "hidden_dims must be non-empty with every width >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn repr_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated non-empty")
    }
}

/// Which representation a distance-based score is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Projection-head output `z`.
    #[default]
    Projection,
    /// Encoder output `h`.
    Encoder,
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(Layer::Projection),
            "encoder" => Ok(Layer::Encoder),
            other => Err(Error::Config(format!("unknown layer {other:?}"))),
        }
    }
}

/// Parameter groups with separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LinearSlot {
    weight: usize,
    bias: usize,
}

/// All trainable weights. Linear layers store `W` as `in × out` so a batch
/// of row vectors maps as `X · W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub params: Vec<Parameter>,
}

/// Which parts of the model receive gradients in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub encoder: bool,
    pub head: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        encoder: true,
        head: true,
    };
    pub const NONE: Trainable = Trainable {
        encoder: false,
        head: false,
    };
    pub const HEAD_ONLY: Trainable = Trainable {
        encoder: false,
        head: true,
    };
}

/// Frames of several samples stacked row-wise with segment offsets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub frames: Matrix,
    pub offsets: Vec<usize>,
}

impl Batch {
    pub fn from_sequences<'a, I>(seqs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureSequence>,
    {
        let mut offsets = vec![0];
        let mut data = Vec::new();
        let mut cols = None;
        for s in seqs {
            if s.rows() == 0 {
                return Err(Error::EmptySequence);
            }
            match cols {
                None => cols = Some(s.cols()),
                Some(c) if c != s.cols() => {
                    return Err(Error::dim("batch", format!("{} vs {c} features", s.cols())))
                }
                _ => {}
            }
            data.extend_from_slice(s.data());
            offsets.push(offsets.last().unwrap() + s.rows());
        }
        let rows = *offsets.last().unwrap();
        let frames = Matrix::from_vec(rows, cols.unwrap_or(0), data)?;
        Ok(Self { frames, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Graph handles produced by [`ModelParams::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub h: Var,
    pub z: Option<Var>,
    pub mos: Option<Var>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, seeded.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut linear = |name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            params.push(Parameter::new(
                format!("{name}.weight"),
                Matrix::from_vec(fan_in, fan_out, w).expect("sized"),
            ));
            params.push(Parameter::new(format!("{name}.bias"), Matrix::zeros(1, fan_out)));
        };
        let mut prev = config.input_dim;
        for (l, &w) in config.hidden_dims.iter().enumerate() {
            linear(&format!("encoder.{l}"), prev, w, &mut rng);
            prev = w;
        }
        linear("projection", prev, config.embed_dim, &mut rng);
        if config.mos_head {
            linear("mos_head", prev, 1, &mut rng);
        }
        Ok(Self { config, params })
    }

    fn encoder_slots(&self) -> impl Iterator<Item = LinearSlot> {
        (0..self.config.hidden_dims.len()).map(|l| LinearSlot {
            weight: 2 * l,
            bias: 2 * l + 1,
        })
    }

    fn projection_slot(&self) -> LinearSlot {
        let base = 2 * self.config.hidden_dims.len();
        LinearSlot {
            weight: base,
            bias: base + 1,
        }
    }

    fn mos_slot(&self) -> Option<LinearSlot> {
        self.config.mos_head.then(|| {
            let base = 2 * self.config.hidden_dims.len() + 2;
            LinearSlot {
                weight: base,
                bias: base + 1,
            }
        })
    }

    /// Group of parameter `idx`: encoder layers vs projection/MOS heads.
    pub fn group(&self, idx: usize) -> ParamGroup {
        if idx < 2 * self.config.hidden_dims.len() {
            ParamGroup::Encoder
        } else {
            ParamGroup::Head
        }
    }

    pub fn encoder_params(&self) -> &[Parameter] {
        &self.params[..2 * self.config.hidden_dims.len()]
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Adds a MOS head with zero weights and the given bias if absent.
    pub fn ensure_mos_head(&mut self, bias: f64) {
        if self.config.mos_head {
            return;
        }
        self.config.mos_head = true;
        let d = self.config.repr_dim();
        self.params
            .push(Parameter::new("mos_head.weight", Matrix::zeros(d, 1)));
        self.params
            .push(Parameter::new("mos_head.bias", Matrix::filled(1, 1, bias)));
    }

    pub fn mos_head_mut(&mut self) -> Option<(&mut Parameter, &mut Parameter)> {
        let slot = self.mos_slot()?;
        let (lo, hi) = self.params.split_at_mut(slot.bias);
        Some((&mut lo[slot.weight], &mut hi[0]))
    }

    fn leaf(&self, g: &mut Graph, idx: usize, trainable: bool) -> Var {
        if trainable {
            g.param(idx, &self.params[idx].value)
        } else {
            g.constant(self.params[idx].value.clone())
        }
    }

    fn linear(&self, g: &mut Graph, x: Var, slot: LinearSlot, trainable: bool) -> Result<Var> {
        let w = self.leaf(g, slot.weight, trainable);
        let b = self.leaf(g, slot.bias, trainable);
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }

    /// Records encoder (and optionally projection / MOS head) on `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &Batch,
        trainable: Trainable,
        want_projection: bool,
        want_mos: bool,
    ) -> Result<Forward> {
        if batch.frames.cols() != self.config.input_dim {
            return Err(Error::dim(
                "encode",
                format!(
                    "{} input features, model expects {}",
                    batch.frames.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let mut x = g.constant(batch.frames.clone());
        for slot in self.encoder_slots() {
            x = self.linear(g, x, slot, trainable.encoder)?;
            x = g.relu(x);
        }
        let h = g.segment_mean(x, &batch.offsets)?;
        let z = if want_projection {
            let a = g.relu(h);
            Some(self.linear(g, a, self.projection_slot(), trainable.head)?)
        } else {
            None
        };
        let mos = if want_mos {
            let slot = self
                .mos_slot()
                .ok_or_else(|| Error::Config("model has no MOS head".into()))?;
            Some(self.linear(g, h, slot, trainable.head)?)
        } else {
            None
        };
        Ok(Forward { h, z, mos })
    }

    /// Encoder representation `h` of one sequence.
    pub fn encode(&self, x: &FeatureSequence) -> Result<Vec<f64>> {
        Ok(self.embed_batch(std::slice::from_ref(x), Layer::Encoder)?.row(0).to_vec())
    }

    /// Projection `z = W · relu(h) + b`.
    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        let slot = self.projection_slot();
        let w = &self.params[slot.weight].value;
        if h.len() != w.rows() {
            return Err(Error::dim(
                "project",
                format!("{} features, projection expects {}", h.len(), w.rows()),
            ));
        }
        let a = Matrix::row_vector(&h.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect::<Vec<_>>());
        let mut z = a.matmul(w)?;
        z.add_assign(&self.params[slot.bias].value)?;
        Ok(z.into_vec())
    }

    /// Raw affine MOS prediction from `h` (not clamped to the label range).
    pub fn predict_mos(&self, x: &FeatureSequence) -> Result<f64> {
        Ok(self.predict_mos_batch(std::slice::from_ref(x))?[0])
    }

    pub fn predict_mos_batch(&self, xs: &[FeatureSequence]) -> Result<Vec<f64>> {
        if !self.config.mos_head {
            return Err(Error::Config("model has no MOS head".into()));
        }
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(256) {
            let batch = Batch::from_sequences(chunk)?;
            let mut g = Graph::new();
            let f = self.forward(&mut g, &batch, Trainable::NONE, false, true)?;
            out.extend_from_slice(g.value(f.mos.unwrap()).data());
        }
        Ok(out)
    }

    /// One row per sequence at the requested layer.
    pub fn embed_batch(&self, xs: &[FeatureSequence], layer: Layer) -> Result<Matrix> {
        let dim = match layer {
            Layer::Encoder => self.config.repr_dim(),
            Layer::Projection => self.config.embed_dim,
        };
        let mut data = Vec::with_capacity(xs.len() * dim);
        for chunk in xs.chunks(256) {
            let batch = Batch::from_sequences(chunk)?;
            let mut g = Graph::new();
            let f = self.forward(&mut g, &batch, Trainable::NONE, layer == Layer::Projection, false)?;
            let v = match layer {
                Layer::Encoder => f.h,
                Layer::Projection => f.z.unwrap(),
            };
            data.extend_from_slice(g.value(v).data());
        }
        Matrix::from_vec(xs.len(), dim, data)
    }
}

/// Embeddings of clean, unpaired reference samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub layer: Layer,
    pub embeddings: Matrix,
}

impl ReferenceSet {
    pub fn from_samples(params: &ModelParams, refs: &[FeatureSequence], layer: Layer) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Config("reference set is empty".into()));
        }
        Ok(Self {
            layer,
            embeddings: params.embed_batch(refs, layer)?,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean Euclidean distance from `embedding` to every reference.
    pub fn mean_distance(&self, embedding: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Config("reference set is empty".into()));
        }
        if embedding.len() != self.embeddings.cols() {
            return Err(Error::dim(
                "nmr_score",
                format!("{} vs {} dims", embedding.len(), self.embeddings.cols()),
            ));
        }
        let total: f64 = (0..self.len())
            .map(|r| euclidean(embedding, self.embeddings.row(r)))
            .sum();
        Ok(total / self.len() as f64)
    }
}

/// Non-matching-reference score: mean embedding distance to clean references.
/// Lower means closer to clean.
pub fn nmr_score(params: &ModelParams, x: &FeatureSequence, refs: &ReferenceSet) -> Result<f64> {
    Ok(nmr_scores(params, std::slice::from_ref(x), refs)?[0])
}

pub fn nmr_scores(params: &ModelParams, xs: &[FeatureSequence], refs: &ReferenceSet) -> Result<Vec<f64>> {
    let e = params.embed_batch(xs, refs.layer)?;
    (0..e.rows()).map(|r| refs.mean_distance(e.row(r))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![5, 4],
            embed_dim: 3,
            mos_head: true,
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Matrix {
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.hidden_dims.clear();
        assert!(ModelParams::init(c, 0).is_err());
        let mut c = small_config();
        c.embed_dim = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let mut p = ModelParams::init(small_config(), 1).unwrap();
        p.params.iter_mut().for_each(|q| q.value.fill(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = p.encode(&random_seq(&mut rng, 4, 3)).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_frame_equals_mlp() {
        let p = ModelParams::init(small_config(), 2).unwrap();
        let x = Matrix::row_vector(&[0.3, -0.7, 1.1]);
        let mut a = x.clone();
        for l in 0..2 {
            a = a.matmul(&p.params[2 * l].value).unwrap();
            a.add_assign(&p.params[2 * l + 1].value).unwrap();
            a = a.map(|v| v.max(0.0));
        }
        assert_eq!(p.encode(&x).unwrap(), a.into_vec());
    }

    #[test]
    fn frame_order_does_not_matter() {
        let p = ModelParams::init(small_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_seq(&mut rng, 6, 3);
        let reversed = x.select_rows(&[5, 4, 3, 2, 1, 0]);
        let a = p.encode(&x).unwrap();
        let b = p.encode(&reversed).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_feature_dim() {
        let p = ModelParams::init(small_config(), 0).unwrap();
        assert!(matches!(p.encode(&Matrix::zeros(2, 4)), Err(Error::Dimension { .. })));
        assert!(matches!(p.encode(&Matrix::zeros(0, 3)), Err(Error::EmptySequence)));
    }

    #[test]
    fn projection_examples() {
        let mut p = ModelParams::init(small_config(), 0).unwrap();
        let slot = p.projection_slot();
        assert_eq!(p.project(&[-1.0, -2.0, -0.5, -3.0]).unwrap(), vec![0.0; 3]);
        let mut w = Matrix::zeros(4, 3);
        for i in 0..3 {
            w[(i, i)] = 1.0;
        }
        p.params[slot.weight].value = w;
        assert_eq!(p.project(&[0.5, 1.5, 2.0, 0.0]).unwrap(), vec![0.5, 1.5, 2.0]);
        assert!(p.project(&[1.0]).is_err());
    }

    #[test]
    fn mos_head_bias_only() {
        let mut p = ModelParams::init(small_config(), 0).unwrap();
        let (w, b) = p.mos_head_mut().unwrap();
        w.value.fill(0.0);
        b.value.fill(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(p.predict_mos(&random_seq(&mut rng, 5, 3)).unwrap(), 3.0);
    }

    #[test]
    fn prediction_is_not_clamped() {
        let mut p = ModelParams::init(small_config(), 0).unwrap();
        let (w, b) = p.mos_head_mut().unwrap();
        w.value.fill(0.0);
        b.value.fill(7.5);
        assert_eq!(p.predict_mos(&Matrix::zeros(1, 3)).unwrap(), 7.5);
    }

    #[test]
    fn missing_head_is_config_error() {
        let mut c = small_config();
        c.mos_head = false;
        let p = ModelParams::init(c, 0).unwrap();
        assert!(matches!(p.predict_mos(&Matrix::zeros(1, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn encode_project_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let seqs: Vec<Matrix> = (0..4).map(|i| random_seq(&mut rng, 2 + i, 3)).collect();
        let batch = Batch::from_sequences(&seqs).unwrap();
        let mut p = ModelParams::init(small_config(), 5).unwrap();
        // Non-zero biases so ReLU kinks are not hit exactly.
        for q in p.params.iter_mut().filter(|q| q.name.ends_with("bias")) {
            q.value = q.value.map(|_| rng.random_range(0.05..0.2));
        }
        let loss = |p: &ModelParams| -> Result<(Graph, Var)> {
            let mut g = Graph::new();
            let f = p.forward(&mut g, &batch, Trainable::ALL, true, false)?;
            let z = f.z.unwrap();
            let target = Matrix::zeros(4, 3);
            let l = g.mse(z, target)?;
            Ok((g, l))
        };
        p.zero_grad();
        let (g, l) = loss(&p).unwrap();
        g.backward(l).unwrap().accumulate_into(&mut p.params).unwrap();
        let config = p.config.clone();
        let err = finite_diff_check(&mut p.params, 1e-5, |params| {
            let m = ModelParams {
                config: config.clone(),
                params: params.to_vec(),
            };
            let (g, l) = loss(&m)?;
            Ok(g.value(l)[(0, 0)])
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn nmr_examples() {
        let p = ModelParams::init(small_config(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_seq(&mut rng, 5, 3);
        let y = random_seq(&mut rng, 5, 3);
        let refs = ReferenceSet::from_samples(&p, &[x.clone()], Layer::Projection).unwrap();
        assert_eq!(nmr_score(&p, &x, &refs).unwrap(), 0.0);

        let single = ReferenceSet::from_samples(&p, &[x.clone(), y.clone()], Layer::Encoder).unwrap();
        let doubled =
            ReferenceSet::from_samples(&p, &[x.clone(), y.clone(), x.clone(), y.clone()], Layer::Encoder)
                .unwrap();
        let probe = random_seq(&mut rng, 3, 3);
        let a = nmr_score(&p, &probe, &single).unwrap();
        let b = nmr_score(&p, &probe, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a >= 0.0);
        assert!(ReferenceSet::from_samples(&p, &[], Layer::Encoder).is_err());
    }
}
