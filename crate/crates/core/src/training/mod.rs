//! Training loops: the end-to-end L2 baseline, batch-all triplet
//! pre-training of the encoder, the frozen-encoder MOS head and the offline
//! hard-triplet baseline. All share one Adam/early-stopping loop.

mod bench;
mod loops;
mod optim;
mod schedule;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{MarginSpec, Reduction, SignMode};
use crate::model::{Checkpoint, EncoderConfig, Layer};
use crate::numerics::{FeatureSequence, Matrix};

pub use loops::{
    grid_search_l2, train_l2_baseline, train_nr_head, train_offline, train_scoreq, GridResult, GridRow,
};
pub use bench::{time_training_step, StepTiming};
pub use optim::Adam;
pub use schedule::{CriterionKind, EarlyStopState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    L2,
    ScoreqFixed,
    ScoreqAdaptive,
    OfflineTriplet,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::L2 => "l2",
            LossMode::ScoreqFixed => "scoreq_fixed",
            LossMode::ScoreqAdaptive => "scoreq_adaptive",
            LossMode::OfflineTriplet => "offline_triplet",
        }
    }

    pub fn is_triplet(self) -> bool {
        self != LossMode::L2
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossMode::L2),
            "scoreq_fixed" => Ok(LossMode::ScoreqFixed),
            "scoreq_adaptive" => Ok(LossMode::ScoreqAdaptive),
            "offline_triplet" => Ok(LossMode::OfflineTriplet),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub model: EncoderConfig,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub decay_factor: f64,
    pub decay_patience_epochs: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Constant margin for `scoreq_fixed` and `offline_triplet`.
    pub margin: f64,
    /// Label-gap divisor for `scoreq_adaptive`.
    pub kappa: f64,
    pub sign_mode: SignMode,
    pub reduction: Reduction,
    /// Frames kept per training sequence; evaluation always sees full length.
    pub max_frames: Option<usize>,
    /// Representation used for the validation distance score.
    pub val_layer: Layer,
    /// Anchors sampled for the offline triplet list; `None` uses every sample.
    pub offline_anchors: Option<usize>,
    pub offline_per_anchor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(LossMode::ScoreqAdaptive)
    }
}

impl TrainConfig {
    pub fn for_mode(loss_mode: LossMode) -> Self {
        Self {
            loss_mode,
            model: EncoderConfig::default(),
            batch_size: if loss_mode == LossMode::L2 { 64 } else { 128 },
            lr_encoder: 1e-5,
            lr_head: 1e-3,
            decay_factor: 0.99,
            decay_patience_epochs: 10,
            early_stop_patience: 100,
            max_epochs: 500,
            seed: 0,
            margin: 0.2,
            kappa: 4.0,
            sign_mode: SignMode::Intuitive,
            reduction: Reduction::MeanActive,
            max_frames: None,
            val_layer: Layer::Projection,
            offline_anchors: None,
            offline_per_anchor: 10,
        }
    }

    pub fn margin_spec(&self) -> MarginSpec {
        match self.loss_mode {
            LossMode::ScoreqAdaptive => MarginSpec::adaptive(self.kappa).with_sign_mode(self.sign_mode),
            _ => MarginSpec::fixed(self.margin),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr_encoder) || !positive(self.lr_head) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        let min_batch = if self.loss_mode.is_triplet() { 3 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::BatchTooSmall {
                min: min_batch,
                got: self.batch_size,
            });
        }
        if self.max_epochs == 0 || self.decay_patience_epochs == 0 {
            return Err(Error::Config("max_epochs and decay_patience_epochs must be >= 1".into()));
        }
        if self.max_frames == Some(0) {
            return Err(Error::Config("max_frames must be >= 1".into()));
        }
        if self.offline_per_anchor == 0 || self.offline_anchors == Some(0) {
            return Err(Error::Config("offline anchor counts must be >= 1".into()));
        }
        self.margin_spec().validate()
    }
}

/// First `max_frames` frames of `x` (all of them when `None` or `T` is smaller).
pub fn trim_frames(x: &FeatureSequence, max_frames: Option<usize>) -> FeatureSequence {
    match max_frames {
        Some(m) if m < x.rows() => {
            Matrix::from_vec(m, x.cols(), x.data()[..m * x.cols()].to_vec()).expect("prefix shape")
        }
        _ => x.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean loss over the epoch's non-skipped batches.
    pub train_loss: f64,
    pub val_criterion: f64,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub active_triplet_fraction: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_criterion,lr_encoder,lr_head,active_triplet_fraction";

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let frac = r.active_triplet_fraction.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_criterion, r.lr_encoder, r.lr_head, frac
        );
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Validation criterion of the untrained model (epoch 0).
    pub initial_criterion: f64,
    pub epochs: usize,
    pub steps: usize,
    pub skipped_batches: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// How many times the offline triplet list was built.
    pub triplet_list_builds: usize,
    pub triplet_list_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    /// Checkpoint with the best validation criterion (epoch 0 is the initial model).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochRow>,
    pub stats: TrainStats,
}
