//! Held-out-family comparison of the triplet-trained NR model against the
//! L2 baseline and the offline-triplet baseline on the synthetic corpus.
//!
//! One run holds out one degradation family, trains every model on the
//! remaining families and scores them on the held-out family. The in-domain
//! test share of the other families feeds the embedding diagnostics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use scoreq_core::data::{generate_corpus, generate_references, partition, family_tag, LabeledSample, SyntheticSpec};
use scoreq_core::eval::{bootstrap_compare, diagnose_embeddings, pearson, spearman, BootstrapConfig, BootstrapReport};
use scoreq_core::model::{nmr_scores, Checkpoint, Layer, ReferenceSet};
use scoreq_core::numerics::FeatureSequence;
use scoreq_core::training::{train_l2_baseline, train_nr_head, train_offline, train_scoreq, LossMode, TrainConfig};
use scoreq_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub corpus: SyntheticSpec,
    pub seeds: Vec<u64>,
    /// Families to hold out, one run each; empty means every family.
    pub folds: Vec<String>,
    pub scoreq: TrainConfig,
    pub head: TrainConfig,
    pub l2: TrainConfig,
    pub offline: Option<TrainConfig>,
    pub bootstrap_iterations: usize,
    /// Layer of the triplet-trained encoder checkpoint fed to the diagnostics.
    pub diagnostics_layer_triplet: Layer,
    /// Layer of the L2 model fed to the diagnostics (the one attached to its output).
    pub diagnostics_layer_l2: Layer,
}

fn desk_model() -> scoreq_core::model::EncoderConfig {
    scoreq_core::model::EncoderConfig {
        input_dim: 16,
        hidden_dims: vec![64],
        embed_dim: 32,
        mos_head: false,
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let common = |mode: LossMode| TrainConfig {
            model: desk_model(),
            lr_encoder: 1e-3,
            lr_head: 1e-3,
            max_epochs: 60,
            early_stop_patience: 15,
            decay_patience_epochs: 5,
            ..TrainConfig::for_mode(mode)
        };
        Self {
            corpus: SyntheticSpec::default(),
            seeds: vec![0, 1, 2],
            folds: Vec::new(),
            scoreq: common(LossMode::ScoreqAdaptive),
            head: TrainConfig {
                lr_head: 1e-2,
                batch_size: 64,
                ..common(LossMode::ScoreqAdaptive)
            },
            l2: common(LossMode::L2),
            offline: Some(TrainConfig {
                offline_anchors: Some(200),
                ..common(LossMode::OfflineTriplet)
            }),
            bootstrap_iterations: 15_000,
            diagnostics_layer_triplet: Layer::Projection,
            diagnostics_layer_l2: Layer::Encoder,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub heldout_pc: f64,
    pub in_domain_nmi: f64,
    pub in_domain_pc_dist_mos: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub holdout: String,
    pub seed: u64,
    pub scoreq: ModelScores,
    pub l2: ModelScores,
    pub offline: Option<ModelScores>,
    /// SCOREQ (model A) against L2 (model B) on the held-out family.
    pub bootstrap: BootstrapReport,
    /// Spearman between reference distance and true severity, in-domain test.
    pub nmr_severity_sc: f64,
    /// Wall time; left out of the serialized report so reruns match byte for byte.
    #[serde(skip)]
    pub seconds: f64,
}

struct Data {
    train: Vec<LabeledSample>,
    val: Vec<LabeledSample>,
    heldout: Vec<LabeledSample>,
    in_domain: Vec<LabeledSample>,
    refs: Vec<FeatureSequence>,
}

fn prepare(cfg: &ProtocolConfig, holdout: &str, seed: u64) -> Result<Data> {
    let spec = SyntheticSpec {
        seed,
        holdout_families: vec![holdout.to_string()],
        ..cfg.corpus.clone()
    };
    let (splits, _) = partition(generate_corpus(&spec)?);
    let (heldout, in_domain) = splits.test.into_iter().partition(|s| s.degradation == holdout);
    let refs = generate_references(&spec)?.into_iter().map(|r| r.features).collect();
    Ok(Data {
        train: splits.train,
        val: splits.val,
        heldout,
        in_domain,
        refs,
    })
}

fn features(samples: &[LabeledSample]) -> Vec<FeatureSequence> {
    samples.iter().map(|s| s.features.clone()).collect()
}

fn mos(samples: &[LabeledSample]) -> Vec<f64> {
    samples.iter().map(|s| s.mos).collect()
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        for c in [&self.scoreq, &self.head, &self.l2].into_iter().chain(self.offline.as_ref()) {
            c.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("protocol needs at least one seed".into()));
        }
        let tags: Vec<String> = (0..self.corpus.n_families).map(family_tag).collect();
        if let Some(f) = self.folds.iter().find(|f| !tags.contains(f)) {
            return Err(Error::Config(format!("fold {f:?} is not a family of the corpus")));
        }
        Ok(())
    }
}

/// `nr` predicts MOS; `embed` at `layer` feeds the diagnostics.
fn score(
    nr: &Checkpoint,
    (embed, layer): (&Checkpoint, Layer),
    d: &Data,
    seed: u64,
    best_epoch: usize,
) -> Result<(ModelScores, Vec<f64>)> {
    let pred = nr.model.predict_mos_batch(&features(&d.heldout))?;
    let diag = diagnose_embeddings(&embed.model, &d.in_domain, &d.refs, layer, None, seed)?;
    Ok((
        ModelScores {
            heldout_pc: pearson(&pred, &mos(&d.heldout))?,
            in_domain_nmi: diag.nmi,
            in_domain_pc_dist_mos: diag.pc_dist_mos,
            best_epoch,
        },
        pred,
    ))
}

fn with_seed(c: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..c.clone() }
}

/// Trains and scores every model for one (held-out family, seed) pair.
pub fn run_one(cfg: &ProtocolConfig, holdout: &str, seed: u64) -> Result<RunOutcome> {
    let start = Instant::now();
    let d = prepare(cfg, holdout, seed)?;

    let enc = train_scoreq(&d.train, &d.val, &d.refs, &with_seed(&cfg.scoreq, seed))?;
    let head = train_nr_head(&enc.best, &d.train, &d.val, &with_seed(&cfg.head, seed))?;
    let (scoreq, pred_s) = score(&head.best, (&enc.best, cfg.diagnostics_layer_triplet), &d, seed, enc.stats.best_epoch)?;

    let reference = ReferenceSet::from_samples(&enc.best.model, &d.refs, cfg.scoreq.val_layer)?;
    let dist = nmr_scores(&enc.best.model, &features(&d.in_domain), &reference)?;
    let severity: Vec<f64> = d.in_domain.iter().map(|s| s.severity.unwrap_or(f64::NAN)).collect();
    let nmr_severity_sc = spearman(&dist, &severity)?;

    let l2_run = train_l2_baseline(&d.train, &d.val, &with_seed(&cfg.l2, seed))?;
    let (l2, pred_l) = score(&l2_run.best, (&l2_run.best, cfg.diagnostics_layer_l2), &d, seed, l2_run.stats.best_epoch)?;

    let offline = match &cfg.offline {
        Some(oc) => {
            let enc = train_offline(&d.train, &d.val, &d.refs, &with_seed(oc, seed))?;
            let head = train_nr_head(&enc.best, &d.train, &d.val, &with_seed(&cfg.head, seed))?;
            Some(score(&head.best, (&enc.best, cfg.diagnostics_layer_triplet), &d, seed, enc.stats.best_epoch)?.0)
        }
        None => None,
    };

    let bootstrap = bootstrap_compare(
        &mos(&d.heldout),
        &pred_s,
        &pred_l,
        &BootstrapConfig {
            iterations: cfg.bootstrap_iterations,
            seed,
            name_a: "SCOREQ".into(),
            name_b: "L2".into(),
            ..Default::default()
        },
    )?;
    Ok(RunOutcome {
        holdout: holdout.to_string(),
        seed,
        scoreq,
        l2,
        offline,
        bootstrap,
        nmr_severity_sc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every (fold, seed) pair in order: folds outer, seeds inner.
pub fn run_protocol(cfg: &ProtocolConfig, mut progress: impl FnMut(&RunOutcome)) -> Result<Vec<RunOutcome>> {
    let folds: Vec<String> = if cfg.folds.is_empty() {
        (0..cfg.corpus.n_families).map(family_tag).collect()
    } else {
        cfg.folds.clone()
    };
    let mut out = Vec::new();
    for f in &folds {
        for &seed in &cfg.seeds {
            let r = run_one(cfg, f, seed)?;
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Counts and averages over a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub runs: usize,
    /// Runs where SCOREQ's held-out PC exceeds L2's.
    pub scoreq_beats_l2: usize,
    /// Runs where the bootstrap CI excludes zero in SCOREQ's favour.
    pub scoreq_significant: usize,
    /// Runs where L2 is significantly better.
    pub l2_significant: usize,
    /// Runs where SCOREQ's held-out PC is at least the offline baseline's.
    pub scoreq_ge_offline: Option<usize>,
    pub mean_heldout_pc_scoreq: f64,
    pub mean_heldout_pc_l2: f64,
    pub mean_heldout_pc_offline: Option<f64>,
    pub mean_nmi_scoreq: f64,
    pub mean_nmi_l2: f64,
    pub mean_abs_pc_dist_mos_scoreq: f64,
    pub mean_abs_pc_dist_mos_l2: f64,
    pub min_abs_nmr_severity_sc: f64,
}

pub fn summarize(runs: &[RunOutcome]) -> ProtocolSummary {
    let offline: Vec<(f64, f64)> = runs
        .iter()
        .filter_map(|r| r.offline.as_ref().map(|o| (r.scoreq.heldout_pc, o.heldout_pc)))
        .collect();
    let has_offline = !offline.is_empty() && offline.len() == runs.len();
    ProtocolSummary {
        runs: runs.len(),
        scoreq_beats_l2: runs.iter().filter(|r| r.scoreq.heldout_pc > r.l2.heldout_pc).count(),
        scoreq_significant: runs.iter().filter(|r| r.bootstrap.significant && r.bootstrap.ci_low > 0.0).count(),
        l2_significant: runs.iter().filter(|r| r.bootstrap.significant && r.bootstrap.ci_high < 0.0).count(),
        scoreq_ge_offline: has_offline.then(|| offline.iter().filter(|(s, o)| s >= o).count()),
        mean_heldout_pc_scoreq: mean(runs.iter().map(|r| r.scoreq.heldout_pc)),
        mean_heldout_pc_l2: mean(runs.iter().map(|r| r.l2.heldout_pc)),
        mean_heldout_pc_offline: has_offline.then(|| mean(offline.iter().map(|p| p.1))),
        mean_nmi_scoreq: mean(runs.iter().map(|r| r.scoreq.in_domain_nmi)),
        mean_nmi_l2: mean(runs.iter().map(|r| r.l2.in_domain_nmi)),
        mean_abs_pc_dist_mos_scoreq: mean(runs.iter().map(|r| r.scoreq.in_domain_pc_dist_mos.abs())),
        mean_abs_pc_dist_mos_l2: mean(runs.iter().map(|r| r.l2.in_domain_pc_dist_mos.abs())),
        min_abs_nmr_severity_sc: runs.iter().map(|r| r.nmr_severity_sc.abs()).fold(f64::INFINITY, f64::min),
    }
}

impl ProtocolSummary {
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        out.push_str(&format!("runs                          {}\n", self.runs));
        out.push_str(&format!("scoreq > l2 (held-out PC)     {}\n", self.scoreq_beats_l2));
        out.push_str(&format!("scoreq significantly better   {}\n", self.scoreq_significant));
        out.push_str(&format!("l2 significantly better       {}\n", self.l2_significant));
        out.push_str(&format!(
            "scoreq >= offline             {}\n",
            self.scoreq_ge_offline.map_or("-".to_string(), |v| v.to_string())
        ));
        out.push_str(&format!(
            "mean held-out PC              scoreq {:.4}  l2 {:.4}  offline {}\n",
            self.mean_heldout_pc_scoreq,
            self.mean_heldout_pc_l2,
            opt(self.mean_heldout_pc_offline)
        ));
        out.push_str(&format!(
            "mean in-domain NMI            scoreq {:.4}  l2 {:.4}\n",
            self.mean_nmi_scoreq, self.mean_nmi_l2
        ));
        out.push_str(&format!(
            "mean |PC(distance, MOS)|      scoreq {:.4}  l2 {:.4}\n",
            self.mean_abs_pc_dist_mos_scoreq, self.mean_abs_pc_dist_mos_l2
        ));
        out.push_str(&format!("min |SC(distance, severity)|  {:.4}\n", self.min_abs_nmr_severity_sc));
        out
    }
}
