//! Wall-clock cost of one optimisation step (forward, loss, backward,
//! Adam update) for the L2 objective against the batch-all triplet loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{LossMode, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::scoreq_on_graph;
use crate::model::{Batch, EncoderConfig, ModelParams, Trainable};
use crate::numerics::{FeatureSequence, Graph, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub loss_mode: LossMode,
    pub batch_size: usize,
    pub reps: usize,
    pub warmup: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    /// Valid and active triplets in the timed batch; zero for L2.
    pub valid_triplets: usize,
    pub active_triplets: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `reps` steps on the batch `(xs, ys)` after `warmup` untimed steps.
/// Supports `l2`, `scoreq_fixed` and `scoreq_adaptive`.
pub fn time_training_step(
    cfg: &TrainConfig,
    xs: &[FeatureSequence],
    ys: &[f64],
    warmup: usize,
    reps: usize,
) -> Result<StepTiming> {
    cfg.validate()?;
    if xs.len() != ys.len() {
        return Err(Error::dim("bench", format!("{} inputs vs {} labels", xs.len(), ys.len())));
    }
    if reps == 0 {
        return Err(Error::Config("bench needs >= 1 timed repetition".into()));
    }
    if cfg.loss_mode == LossMode::OfflineTriplet {
        return Err(Error::Config("bench times l2 and scoreq modes only".into()));
    }
    let l2 = cfg.loss_mode == LossMode::L2;
    let mut model = ModelParams::init(
        EncoderConfig {
            mos_head: l2,
            ..cfg.model.clone()
        },
        cfg.seed,
    )?;
    let batch = Batch::from_sequences(xs)?;
    let target = Matrix::column_vector(ys);
    let spec = cfg.margin_spec();
    let mut opt = Adam::new(&model.params);
    let (mut valid, mut active) = (0, 0);
    let mut times = Vec::with_capacity(reps);
    for rep in 0..warmup + reps {
        let t0 = Instant::now();
        model.zero_grad();
        let mut g = Graph::new();
        let f = model.forward(&mut g, &batch, Trainable::ALL, !l2, l2)?;
        let l = if l2 {
            g.mse(f.mos.expect("head requested"), target.clone())?
        } else {
            let (l, out) = scoreq_on_graph(&mut g, f.z.expect("projection requested"), ys, &spec, cfg.reduction)?;
            valid = out.valid_triplets;
            active = out.active_triplets;
            l
        };
        g.backward(l)?.accumulate_into(&mut model.params)?;
        opt.update(&mut model.params, |i| {
            Some(if i < 2 * cfg.model.hidden_dims.len() { cfg.lr_encoder } else { cfg.lr_head })
        })?;
        if rep >= warmup {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    let min_seconds = times.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(StepTiming {
        loss_mode: cfg.loss_mode,
        batch_size: xs.len(),
        reps,
        warmup,
        median_seconds: median(times),
        min_seconds,
        valid_triplets: valid,
        active_triplets: active,
    })
}
