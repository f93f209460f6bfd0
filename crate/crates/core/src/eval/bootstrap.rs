//! Paired bootstrap comparison of two models' correlations with the same
//! ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{average_ranks, pearson};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    fn compute(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Correlation::Pearson => pearson(a, b),
            Correlation::Spearman => pearson(&average_ranks(a), &average_ranks(b)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    pub confidence: f64,
    pub correlation: Correlation,
    pub name_a: String,
    pub name_b: String,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            seed: 0,
            confidence: 0.95,
            correlation: Correlation::Pearson,
            name_a: "model A".into(),
            name_b: "model B".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub name_a: String,
    pub name_b: String,
    pub correlation: Correlation,
    pub rho_model_a: f64,
    pub rho_model_b: f64,
    /// `rho_model_a − rho_model_b` on the full sample.
    pub rho_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub p_value: f64,
    pub significant: bool,
    /// `No Diff.` or the name of the better model.
    pub outcome: String,
    pub iterations: usize,
    pub seed: u64,
    pub degenerate_redraws: usize,
    pub n: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

const MAX_REDRAWS_PER_ITERATION: usize = 1000;

fn one_iteration(
    idx: usize,
    cfg: &BootstrapConfig,
    mos: &[f64],
    a: &[f64],
    b: &[f64],
) -> Option<(f64, usize)> {
    let n = mos.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(idx as u64);
    let (mut m, mut pa, mut pb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for redraws in 0..MAX_REDRAWS_PER_ITERATION {
        for t in 0..n {
            let i = rng.random_range(0..n);
            m[t] = mos[i];
            pa[t] = a[i];
            pb[t] = b[i];
        }
        if let (Ok(ra), Ok(rb)) = (cfg.correlation.compute(&m, &pa), cfg.correlation.compute(&m, &pb)) {
            return Some((ra - rb, redraws));
        }
    }
    None
}

/// Resamples sample indices with replacement and collects the correlation
/// difference on each resample. Iteration `i` draws from its own stream of
/// a generator seeded by `seed`, so results do not depend on thread count.
pub fn bootstrap_compare(mos: &[f64], pred_a: &[f64], pred_b: &[f64], cfg: &BootstrapConfig) -> Result<BootstrapReport> {
    let n = mos.len();
    if pred_a.len() != n || pred_b.len() != n {
        return Err(Error::dim(
            "bootstrap_compare",
            format!("lengths {n}, {}, {}", pred_a.len(), pred_b.len()),
        ));
    }
    if n < 10 {
        return Err(Error::Config(format!("bootstrap needs n >= 10, got {n}")));
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("iterations must be >= 1".into()));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Config("confidence must lie in (0, 1)".into()));
    }
    let rho_a = cfg.correlation.compute(mos, pred_a)?;
    let rho_b = cfg.correlation.compute(mos, pred_b)?;

    let draws: Vec<Option<(f64, usize)>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|i| one_iteration(i, cfg, mos, pred_a, pred_b))
        .collect();
    let mut diffs = Vec::with_capacity(cfg.iterations);
    let mut redraws = 0;
    for d in draws {
        let Some((v, r)) = d else {
            return Err(Error::Evaluation("bootstrap resamples are persistently degenerate".into()));
        };
        diffs.push(v);
        redraws += r;
    }
    if redraws * 100 > cfg.iterations {
        return Err(Error::Evaluation(format!(
            "{redraws} degenerate resamples exceed 1% of {} iterations",
            cfg.iterations
        )));
    }

    let le = diffs.iter().filter(|&&d| d <= 0.0).count();
    let ge = diffs.iter().filter(|&&d| d >= 0.0).count();
    let p_value = (2.0 * (le.min(ge) + 1) as f64 / (cfg.iterations + 1) as f64).min(1.0);

    diffs.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.confidence;
    let ci_low = quantile(&diffs, alpha / 2.0);
    let ci_high = quantile(&diffs, 1.0 - alpha / 2.0);
    let significant = ci_low > 0.0 || ci_high < 0.0;
    let outcome = match (significant, ci_low > 0.0) {
        (false, _) => "No Diff.".to_string(),
        (true, true) => cfg.name_a.clone(),
        (true, false) => cfg.name_b.clone(),
    };
    Ok(BootstrapReport {
        name_a: cfg.name_a.clone(),
        name_b: cfg.name_b.clone(),
        correlation: cfg.correlation,
        rho_model_a: rho_a,
        rho_model_b: rho_b,
        rho_diff: rho_a - rho_b,
        ci_low,
        ci_high,
        confidence: cfg.confidence,
        p_value,
        significant,
        outcome,
        iterations: cfg.iterations,
        seed: cfg.seed,
        degenerate_redraws: redraws,
        n,
    })
}

impl BootstrapReport {
    /// Plain-text table with one row per comparison.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:<14} {:>8} {:>8} {:>9} {:>22} {:<12}\n",
            "Model A", "Model B", "rho A", "rho B", "p", "CI", "Outcome"
        ));
        out.push_str(&format!(
            "{:<14} {:<14} {:>8.4} {:>8.4} {:>9.6} {:>22} {:<12}\n",
            self.name_a,
            self.name_b,
            self.rho_model_a,
            self.rho_model_b,
            self.p_value,
            format!("[{:.4}, {:.4}]", self.ci_low, self.ci_high),
            self.outcome
        ));
        out.push_str(&format!(
            "iterations={} seed={} n={} degenerate_redraws={}\n",
            self.iterations, self.seed, self.n, self.degenerate_redraws
        ));
        out
    }
}
