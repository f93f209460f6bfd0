use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::schedule::{CriterionKind, EarlyStopState};
use super::{trim_frames, EpochRow, LossMode, TrainConfig, TrainRun, TrainStats};
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::eval::spearman;
use crate::loss::{offline_hard_triplets, scoreq_on_graph, triplet_list_on_graph};
use crate::model::{nmr_scores, Batch, Checkpoint, ModelParams, ReferenceSet, Trainable, TrainingMeta};
use crate::numerics::{FeatureSequence, Graph, Matrix};

struct StepLoss {
    value: f64,
    active: usize,
    valid: usize,
}

struct Stage<'a> {
    cfg: &'a TrainConfig,
    name: &'static str,
    kind: CriterionKind,
    n_items: usize,
    /// Parameters the optimizer must not touch.
    frozen: Vec<bool>,
}

fn snapshot(model: &ModelParams, cfg: &TrainConfig, stage: &str, epoch: usize, val: f64) -> Checkpoint {
    let mut m = model.clone();
    m.zero_grad();
    Checkpoint::new(
        m,
        TrainingMeta {
            seed: cfg.seed,
            epoch,
            loss_mode: cfg.loss_mode.as_str().into(),
            stage: stage.into(),
            val_criterion: Some(val),
        },
    )
}

fn with_context(e: Error, ctx: impl FnOnce() -> String) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg}; {}", ctx())),
        other => other,
    }
}

/// Shared epoch loop: shuffled batches without replacement, Adam with
/// per-group rates, validation after every epoch, decay on plateaus and
/// early stopping. Returns the best checkpoint alongside the last one.
fn fit(
    mut model: ModelParams,
    stage: Stage<'_>,
    step: &mut dyn FnMut(&mut ModelParams, &[usize]) -> Result<Option<StepLoss>>,
    validate: &mut dyn FnMut(&ModelParams) -> Result<f64>,
) -> Result<TrainRun> {
    let cfg = stage.cfg;
    let per_epoch = stage.n_items / cfg.batch_size;
    if per_epoch == 0 {
        return Err(Error::BatchTooSmall {
            min: cfg.batch_size,
            got: stage.n_items,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(&model.params);
    let mut early = EarlyStopState::new(stage.kind);
    let v0 = validate(&model)?;
    early.observe(0, v0);
    let mut best = snapshot(&model, cfg, stage.name, 0, v0);
    let (mut lr_enc, mut lr_head) = (cfg.lr_encoder, cfg.lr_head);
    let mut log = Vec::new();
    let mut stats = TrainStats {
        initial_criterion: v0,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..stage.n_items).collect();
    let mut last_val = v0;
    // encoder layers come first in the parameter list
    let depth = 2 * model.config.hidden_dims.len();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut done) = (0.0, 0usize);
        let (mut active, mut valid) = (0usize, 0usize);
        for (b, items) in order.chunks_exact(cfg.batch_size).enumerate() {
            let ctx = || format!("epoch {epoch}, batch {b}, items {items:?}");
            model.zero_grad();
            let Some(l) = step(&mut model, items).map_err(|e| with_context(e, ctx))? else {
                stats.skipped_batches += 1;
                continue;
            };
            if !l.value.is_finite() {
                return Err(Error::NonFinite(format!("loss {}; {}", l.value, ctx())));
            }
            let frozen = &stage.frozen;
            opt.update(&mut model.params, |i| {
                (!frozen[i]).then_some(if i < depth { lr_enc } else { lr_head })
            })
            .map_err(|e| with_context(e, ctx))?;
            loss_sum += l.value;
            done += 1;
            active += l.active;
            valid += l.valid;
            stats.steps += 1;
        }
        let v = validate(&model)?;
        last_val = v;
        log.push(EpochRow {
            epoch,
            train_loss: if done > 0 { loss_sum / done as f64 } else { f64::NAN },
            val_criterion: v,
            lr_encoder: lr_enc,
            lr_head,
            active_triplet_fraction: (cfg.loss_mode.is_triplet() && stage.name != "nr_head")
                .then(|| if valid > 0 { active as f64 / valid as f64 } else { 0.0 }),
        });
        stats.epochs = epoch;
        if early.observe(epoch, v) {
            best = snapshot(&model, cfg, stage.name, epoch, v);
        } else if early.decay_due(cfg.decay_patience_epochs) {
            lr_enc *= cfg.decay_factor;
            lr_head *= cfg.decay_factor;
        }
        if early.should_stop(cfg.early_stop_patience) {
            stats.stopped_early = true;
            break;
        }
    }
    stats.best_epoch = early.best_epoch;
    let last = snapshot(&model, cfg, stage.name, stats.epochs, last_val);
    Ok(TrainRun { best, last, log, stats })
}

fn training_inputs(samples: &[LabeledSample], cfg: &TrainConfig) -> (Vec<FeatureSequence>, Vec<f64>) {
    (
        samples.iter().map(|s| trim_frames(&s.features, cfg.max_frames)).collect(),
        samples.iter().map(|s| s.mos).collect(),
    )
}

fn full_inputs(samples: &[LabeledSample]) -> (Vec<FeatureSequence>, Vec<f64>) {
    (
        samples.iter().map(|s| s.features.clone()).collect(),
        samples.iter().map(|s| s.mos).collect(),
    )
}

fn batch_of(xs: &[FeatureSequence], items: &[usize]) -> Result<Batch> {
    Batch::from_sequences(items.iter().map(|&i| &xs[i]))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_mode(cfg: &TrainConfig, allowed: &[LossMode], op: &str) -> Result<()> {
    cfg.validate()?;
    if !allowed.contains(&cfg.loss_mode) {
        return Err(Error::Config(format!(
            "{op} cannot run loss mode {}",
            cfg.loss_mode.as_str()
        )));
    }
    Ok(())
}

fn require_data(train: &[LabeledSample], val: &[LabeledSample]) -> Result<()> {
    if val.len() < 2 {
        return Err(Error::Config(format!("validation set needs >= 2 samples, got {}", val.len())));
    }
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

/// |Spearman| between reference distance and MOS on the validation set.
fn nmr_validator<'a>(
    cfg: &'a TrainConfig,
    val: &'a [LabeledSample],
    refs: &'a [FeatureSequence],
) -> impl FnMut(&ModelParams) -> Result<f64> + 'a {
    let (vx, vy) = full_inputs(val);
    move |m: &ModelParams| {
        let reference = ReferenceSet::from_samples(m, refs, cfg.val_layer)?;
        let d = nmr_scores(m, &vx, &reference)?;
        match spearman(&d, &vy) {
            Ok(sc) => Ok(sc.abs()),
            Err(Error::UndefinedCorrelation(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    }
}

/// Mean squared error of the MOS head on the validation set.
fn l2_validator(val: &[LabeledSample]) -> impl FnMut(&ModelParams) -> Result<f64> + '_ {
    let (vx, vy) = full_inputs(val);
    move |m: &ModelParams| {
        let p = m.predict_mos_batch(&vx)?;
        Ok(p.iter().zip(&vy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / vy.len() as f64)
    }
}

/// Step one: encoder and projection head trained with the batch-all loss,
/// selected by validation |SC| of the reference-distance score.
pub fn train_scoreq(
    train: &[LabeledSample],
    val: &[LabeledSample],
    refs: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    check_mode(cfg, &[LossMode::ScoreqFixed, LossMode::ScoreqAdaptive], "train_scoreq")?;
    require_data(train, val)?;
    let model = ModelParams::init(
        crate::model::EncoderConfig {
            mos_head: false,
            ..cfg.model.clone()
        },
        cfg.seed,
    )?;
    let (xs, ys) = training_inputs(train, cfg);
    let spec = cfg.margin_spec();
    let mut step = |m: &mut ModelParams, items: &[usize]| -> Result<Option<StepLoss>> {
        let batch = batch_of(&xs, items)?;
        let labels: Vec<f64> = items.iter().map(|&i| ys[i]).collect();
        let mut g = Graph::new();
        let f = m.forward(&mut g, &batch, Trainable::ALL, true, false)?;
        let (l, out) = scoreq_on_graph(&mut g, f.z.expect("projection requested"), &labels, &spec, cfg.reduction)?;
        if out.no_valid_triplets {
            return Ok(None);
        }
        g.backward(l)?.accumulate_into(&mut m.params)?;
        Ok(Some(StepLoss {
            value: out.value,
            active: out.active_triplets,
            valid: out.valid_triplets,
        }))
    };
    let stage = Stage {
        cfg,
        name: "encoder",
        kind: CriterionKind::ValidationScNmr,
        n_items: train.len(),
        frozen: vec![false; model.params.len()],
    };
    fit(model, stage, &mut step, &mut nmr_validator(cfg, val, refs))
}

/// Zero weights and a bias at the mean training label.
fn reset_mos_head(model: &mut ModelParams, bias: f64) {
    model.ensure_mos_head(bias);
    let (w, b) = model.mos_head_mut().expect("head just ensured");
    w.value.fill(0.0);
    b.value.fill(bias);
}

/// Step two: a linear MOS head on the frozen encoder representation,
/// selected by validation MSE. The encoder's gradients are checked to be
/// exactly zero on every step.
pub fn train_nr_head(
    encoder: &Checkpoint,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    require_data(train, val)?;
    let mut model = encoder.model.clone();
    let (xs, ys) = training_inputs(train, cfg);
    reset_mos_head(&mut model, mean(&ys));
    let frozen: Vec<bool> = model.params.iter().map(|p| !p.name.starts_with("mos_head")).collect();
    let depth = 2 * model.config.hidden_dims.len();
    let mut step = |m: &mut ModelParams, items: &[usize]| -> Result<Option<StepLoss>> {
        let batch = batch_of(&xs, items)?;
        let target = Matrix::column_vector(&items.iter().map(|&i| ys[i]).collect::<Vec<_>>());
        let mut g = Graph::new();
        let f = m.forward(&mut g, &batch, Trainable::HEAD_ONLY, false, true)?;
        let l = g.mse(f.mos.expect("head requested"), target)?;
        let value = g.value(l)[(0, 0)];
        g.backward(l)?.accumulate_into(&mut m.params)?;
        if m.params[..depth].iter().any(|p| p.grad.data().iter().any(|&v| v != 0.0)) {
            return Err(Error::Evaluation("encoder received a gradient while frozen".into()));
        }
        Ok(Some(StepLoss { value, active: 0, valid: 0 }))
    };
    let stage = Stage {
        cfg,
        name: "nr_head",
        kind: CriterionKind::ValidationL2,
        n_items: train.len(),
        frozen,
    };
    let mut run = fit(model, stage, &mut step, &mut l2_validator(val))?;
    for ck in [&mut run.best, &mut run.last] {
        ck.meta.loss_mode = encoder.meta.loss_mode.clone();
    }
    Ok(run)
}

/// End-to-end encoder + MOS head trained on MSE, selected by validation MSE.
pub fn train_l2_baseline(train: &[LabeledSample], val: &[LabeledSample], cfg: &TrainConfig) -> Result<TrainRun> {
    check_mode(cfg, &[LossMode::L2], "train_l2_baseline")?;
    require_data(train, val)?;
    let mut model = ModelParams::init(
        crate::model::EncoderConfig {
            mos_head: false,
            ..cfg.model.clone()
        },
        cfg.seed,
    )?;
    let (xs, ys) = training_inputs(train, cfg);
    reset_mos_head(&mut model, mean(&ys));
    let frozen: Vec<bool> = model.params.iter().map(|p| p.name.starts_with("projection")).collect();
    let mut step = |m: &mut ModelParams, items: &[usize]| -> Result<Option<StepLoss>> {
        let batch = batch_of(&xs, items)?;
        let target = Matrix::column_vector(&items.iter().map(|&i| ys[i]).collect::<Vec<_>>());
        let mut g = Graph::new();
        let f = m.forward(&mut g, &batch, Trainable::ALL, false, true)?;
        let l = g.mse(f.mos.expect("head requested"), target)?;
        let value = g.value(l)[(0, 0)];
        g.backward(l)?.accumulate_into(&mut m.params)?;
        Ok(Some(StepLoss { value, active: 0, valid: 0 }))
    };
    let stage = Stage {
        cfg,
        name: "end_to_end",
        kind: CriterionKind::ValidationL2,
        n_items: train.len(),
        frozen,
    };
    fit(model, stage, &mut step, &mut l2_validator(val))
}

/// Baseline with a precomputed list of hard triplets. Mini-batches are drawn
/// from the list; each batch embeds only the samples its triplets touch.
pub fn train_offline(
    train: &[LabeledSample],
    val: &[LabeledSample],
    refs: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    check_mode(cfg, &[LossMode::OfflineTriplet], "train_offline")?;
    require_data(train, val)?;
    let model = ModelParams::init(
        crate::model::EncoderConfig {
            mos_head: false,
            ..cfg.model.clone()
        },
        cfg.seed,
    )?;
    let (xs, ys) = training_inputs(train, cfg);
    let anchors = cfg.offline_anchors.unwrap_or(train.len());
    let mut builds = 0;
    let triplets = {
        builds += 1;
        offline_hard_triplets(&ys, anchors, cfg.offline_per_anchor, cfg.seed)?
    };
    let margin = cfg.margin;
    let mut step = |m: &mut ModelParams, items: &[usize]| -> Result<Option<StepLoss>> {
        let mut local: Vec<usize> = Vec::new();
        let slot = |s: usize, local: &mut Vec<usize>| match local.iter().position(|&x| x == s) {
            Some(p) => p,
            None => {
                local.push(s);
                local.len() - 1
            }
        };
        let rows: Vec<(usize, usize, usize)> = items
            .iter()
            .map(|&t| {
                let tr = triplets[t];
                let a = slot(tr.anchor, &mut local);
                let p = slot(tr.positive, &mut local);
                let n = slot(tr.negative, &mut local);
                (a, p, n)
            })
            .collect();
        let batch = batch_of(&xs, &local)?;
        let mut g = Graph::new();
        let f = m.forward(&mut g, &batch, Trainable::ALL, true, false)?;
        let (l, out) = triplet_list_on_graph(&mut g, f.z.expect("projection requested"), &rows, margin, cfg.reduction)?;
        g.backward(l)?.accumulate_into(&mut m.params)?;
        Ok(Some(StepLoss {
            value: out.value,
            active: out.active_triplets,
            valid: out.valid_triplets,
        }))
    };
    let stage = Stage {
        cfg,
        name: "encoder",
        kind: CriterionKind::ValidationScNmr,
        n_items: triplets.len(),
        frozen: vec![false; model.params.len()],
    };
    let mut run = fit(model, stage, &mut step, &mut nmr_validator(cfg, val, refs))?;
    run.stats.triplet_list_builds = builds;
    run.stats.triplet_list_len = triplets.len();
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub batch_size: usize,
    pub lr: f64,
    /// Best validation MSE, absent when the cell failed.
    pub val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index of the row with the lowest validation loss.
    pub best: Option<usize>,
}

/// Trains one L2 baseline per (batch size, learning rate) cell. The rate is
/// applied to both parameter groups. Every cell starts from the same seed so
/// cells differ only in their hyperparameters.
pub fn grid_search_l2(
    train: &[LabeledSample],
    val: &[LabeledSample],
    base: &TrainConfig,
    batch_sizes: &[usize],
    lrs: &[f64],
) -> Result<GridResult> {
    if batch_sizes.is_empty() || lrs.is_empty() {
        return Err(Error::Config("grid must be non-empty".into()));
    }
    let cells: Vec<(usize, f64)> = batch_sizes
        .iter()
        .flat_map(|&b| lrs.iter().map(move |&lr| (b, lr)))
        .collect();
    let rows: Vec<GridRow> = cells
        .par_iter()
        .map(|&(batch_size, lr)| {
            let cfg = TrainConfig {
                loss_mode: LossMode::L2,
                batch_size,
                lr_encoder: lr,
                lr_head: lr,
                ..base.clone()
            };
            match train_l2_baseline(train, val, &cfg) {
                Ok(run) => GridRow {
                    batch_size,
                    lr,
                    val_loss: run.best.meta.val_criterion,
                    best_epoch: Some(run.stats.best_epoch),
                    error: None,
                },
                Err(e) => GridRow {
                    batch_size,
                    lr,
                    val_loss: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.val_loss.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(GridResult { rows, best })
}
