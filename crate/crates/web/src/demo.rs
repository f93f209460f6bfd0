//! The three demo operations as plain Rust, returning serializable results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use scoreq_core::data::{family_tag, generate_corpus, generate_references, partition, SplitFractions, SyntheticSpec};
use scoreq_core::eval::{bootstrap_compare, diagnose_embeddings, spearman, BootstrapConfig, BootstrapReport, PointRow};
use scoreq_core::loss::{scoreq_from_distances, MarginSpec, Reduction, TripletMask};
use scoreq_core::model::{nmr_scores, EncoderConfig, Layer, ReferenceSet};
use scoreq_core::numerics::{pairwise_dist, FeatureSequence, Matrix};
use scoreq_core::training::{train_l2_baseline, train_scoreq, LossMode, TrainConfig};
use scoreq_core::{Error, Result};

pub const MAX_EXPLORE_LABELS: usize = 12;

#[derive(Debug, Serialize)]
pub struct TripletRow {
    /// 1-based anchor, positive, negative.
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub margin: f64,
    /// Hinge value; zero for inactive triplets.
    pub term: f64,
}

#[derive(Debug, Serialize)]
pub struct Exploration {
    pub labels: Vec<f64>,
    pub embeddings: Vec<[f64; 2]>,
    pub triplets: Vec<TripletRow>,
    pub valid: usize,
    pub active: usize,
    pub loss: f64,
}

pub fn parse_labels(text: &str) -> Result<Vec<f64>> {
    let labels = text
        .split([',', ' ', '\n', '\t'])
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if labels.len() < 3 || labels.len() > MAX_EXPLORE_LABELS {
        return Err(Error::Config(format!(
            "enter between 3 and {MAX_EXPLORE_LABELS} labels, got {}",
            labels.len()
        )));
    }
    Ok(labels)
}

/// Valid triplets and hinge terms of a label vector under random 2-D
/// embeddings (or the embeddings given).
pub fn explore(labels: &[f64], spec: &MarginSpec, embeddings: Option<Vec<[f64; 2]>>, seed: u64) -> Result<Exploration> {
    spec.validate()?;
    let mask = TripletMask::build(labels)?;
    let points = match embeddings {
        Some(p) if p.len() == labels.len() => p,
        Some(p) => {
            return Err(Error::Dimension {
                op: "explore",
                detail: format!("{} points for {} labels", p.len(), labels.len()),
            });
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..labels.len()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
        }
    };
    let z = Matrix::from_rows(&points)?;
    let dist = pairwise_dist(&z, false);
    let (out, _) = scoreq_from_distances(&dist, labels, spec, Reduction::MeanActive)?;
    let triplets = mask
        .triplets()
        .map(|(i, j, k)| {
            let margin = spec.margin(labels[i], labels[j], labels[k]);
            TripletRow {
                anchor: i + 1,
                positive: j + 1,
                negative: k + 1,
                margin,
                term: (dist[(i, j)] - dist[(i, k)] + margin).max(0.0),
            }
        })
        .collect();
    Ok(Exploration {
        labels: labels.to_vec(),
        embeddings: points,
        triplets,
        valid: out.valid_triplets,
        active: out.active_triplets,
        loss: out.value,
    })
}

#[derive(Debug, Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_criterion: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainingDemo {
    pub loss: String,
    pub holdout: String,
    pub best_epoch: usize,
    pub history: Vec<EpochPoint>,
    /// |Spearman| between the model's quality score and MOS on the held-out family.
    pub heldout_sc: f64,
    pub nmi: f64,
    pub pc_dist_mos: f64,
    pub points: Vec<PointRow>,
}

/// Small corpus sized for a browser tab.
pub fn demo_spec(holdout: &str, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        samples_per_family: 60,
        frames: 8,
        input_dim: 8,
        seed,
        holdout_families: vec![holdout.to_string()],
        split: SplitFractions { test: 0.25, val: 0.2 },
        n_references: 20,
        ..SyntheticSpec::default()
    }
}

fn demo_config(loss: LossMode, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        model: EncoderConfig {
            input_dim: 8,
            hidden_dims: vec![32],
            embed_dim: 16,
            mos_head: false,
        },
        batch_size: 48,
        lr_encoder: 2e-3,
        lr_head: 2e-3,
        max_epochs: epochs,
        early_stop_patience: epochs,
        seed,
        ..TrainConfig::for_mode(loss)
    }
}

/// Trains one model on every family but `holdout`, then reports its score on
/// the held-out family and the 2-D view of its in-domain test embeddings.
pub fn train_demo(loss: LossMode, holdout: &str, epochs: usize, seed: u64) -> Result<TrainingDemo> {
    if !matches!(loss, LossMode::L2 | LossMode::ScoreqFixed | LossMode::ScoreqAdaptive) {
        return Err(Error::Config(format!("demo supports l2, scoreq_fixed and scoreq_adaptive, not {}", loss.as_str())));
    }
    if !(1..=200).contains(&epochs) {
        return Err(Error::Config(format!("epochs must be in 1..=200, got {epochs}")));
    }
    let spec = demo_spec(holdout, seed);
    let tags: Vec<String> = (0..spec.n_families).map(family_tag).collect();
    if !tags.iter().any(|t| t == holdout) {
        return Err(Error::Config(format!("holdout must be one of {tags:?}, got {holdout:?}")));
    }
    let (splits, _) = partition(generate_corpus(&spec)?);
    let refs: Vec<FeatureSequence> = generate_references(&spec)?.into_iter().map(|s| s.features).collect();
    let cfg = demo_config(loss, epochs, seed);
    let run = match loss {
        LossMode::L2 => train_l2_baseline(&splits.train, &splits.val, &cfg)?,
        _ => train_scoreq(&splits.train, &splits.val, &refs, &cfg)?,
    };
    let model = &run.best.model;

    let (heldout, in_domain): (Vec<_>, Vec<_>) = splits.test.into_iter().partition(|s| s.degradation == holdout);
    let xs: Vec<FeatureSequence> = heldout.iter().map(|s| s.features.clone()).collect();
    let mos: Vec<f64> = heldout.iter().map(|s| s.mos).collect();
    let (scores, layer) = if loss == LossMode::L2 {
        (model.predict_mos_batch(&xs)?, Layer::Encoder)
    } else {
        let reference = ReferenceSet::from_samples(model, &refs, Layer::Projection)?;
        (nmr_scores(model, &xs, &reference)?, Layer::Projection)
    };
    let heldout_sc = spearman(&scores, &mos).map(f64::abs).unwrap_or(0.0);
    let diag = diagnose_embeddings(model, &in_domain, &refs, layer, None, seed)?;
    Ok(TrainingDemo {
        loss: loss.as_str().to_string(),
        holdout: holdout.to_string(),
        best_epoch: run.best.meta.epoch,
        history: run
            .log
            .iter()
            .map(|r| EpochPoint {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_criterion: r.val_criterion,
            })
            .collect(),
        heldout_sc,
        nmi: diag.nmi,
        pc_dist_mos: diag.pc_dist_mos,
        points: diag.points,
    })
}

/// Simulated paired comparison: two predictors of the same MOS with
/// independent Gaussian errors of the given sizes.
pub fn simulate_bootstrap(n: usize, noise_a: f64, noise_b: f64, iterations: usize, seed: u64) -> Result<BootstrapReport> {
    if !(10..=5000).contains(&n) {
        return Err(Error::Config(format!("n must be in 10..=5000, got {n}")));
    }
    if !(noise_a >= 0.0 && noise_b >= 0.0 && noise_a.is_finite() && noise_b.is_finite()) {
        return Err(Error::Config("noise levels must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mos: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
    let a: Vec<f64> = mos.iter().map(|m| m + noise_a * unit.sample(&mut rng)).collect();
    let b: Vec<f64> = mos.iter().map(|m| m + noise_b * unit.sample(&mut rng)).collect();
    bootstrap_compare(
        &mos,
        &a,
        &b,
        &BootstrapConfig {
            iterations,
            seed,
            name_a: "model A".into(),
            name_b: "model B".into(),
            ..BootstrapConfig::default()
        },
    )
}
