use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    /// |Spearman| between reference distance and MOS; higher is better.
    ValidationScNmr,
    /// Mean squared error of the MOS head; lower is better.
    ValidationL2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub kind: CriterionKind,
    pub best_criterion: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
}

impl EarlyStopState {
    pub fn new(kind: CriterionKind) -> Self {
        let best_criterion = match kind {
            CriterionKind::ValidationScNmr => f64::NEG_INFINITY,
            CriterionKind::ValidationL2 => f64::INFINITY,
        };
        Self {
            kind,
            best_criterion,
            best_epoch: 0,
            epochs_since_improve: 0,
        }
    }

    /// Records the criterion of `epoch`; returns true on strict improvement.
    /// NaN never counts as an improvement.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        let better = match self.kind {
            CriterionKind::ValidationScNmr => value > self.best_criterion,
            CriterionKind::ValidationL2 => value < self.best_criterion,
        };
        if better {
            self.best_criterion = value;
            self.best_epoch = epoch;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        better
    }

    /// The no-improvement counter just reached a multiple of `patience`.
    pub fn decay_due(&self, patience: usize) -> bool {
        patience > 0 && self.epochs_since_improve > 0 && self.epochs_since_improve % patience == 0
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_improve > patience
    }
}
