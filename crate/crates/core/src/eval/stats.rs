use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(op, format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "{op} needs at least 2 samples, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{op} input")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson_unchecked(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair("pearson", a, b)?;
    pearson_unchecked(a, b)
        .ok_or_else(|| Error::UndefinedCorrelation("pearson: zero variance".into()))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair("spearman", a, b)?;
    pearson_unchecked(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::UndefinedCorrelation("spearman: zero rank variance".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub slope: f64,
    pub intercept: f64,
}

impl Mapping {
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedRmse {
    pub rmse: f64,
    pub mapping: Mapping,
    /// Predictions had zero variance, so only an intercept was fitted.
    pub constant_prediction: bool,
}

/// RMSE after a least-squares first-degree mapping of `pred` onto `mos`.
pub fn rmse_mapped(pred: &[f64], mos: &[f64]) -> Result<MappedRmse> {
    check_pair("rmse_mapped", pred, mos)?;
    let (mp, mm) = (mean(pred), mean(mos));
    let spp: f64 = pred.iter().map(|p| (p - mp) * (p - mp)).sum();
    let spm: f64 = pred.iter().zip(mos).map(|(p, m)| (p - mp) * (m - mm)).sum();
    let constant_prediction = spp <= 0.0;
    let slope = if constant_prediction { 0.0 } else { spm / spp };
    let mapping = Mapping {
        slope,
        intercept: mm - slope * mp,
    };
    let sse: f64 = pred
        .iter()
        .zip(mos)
        .map(|(p, m)| (mapping.apply(*p) - m).powi(2))
        .sum();
    Ok(MappedRmse {
        rmse: (sse / pred.len() as f64).sqrt(),
        mapping,
        constant_prediction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pc: f64,
    pub sc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_mapped: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Mapping>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub constant_prediction: bool,
    pub n: usize,
}

/// PC and SC, plus mapped RMSE when `with_rmse`.
pub fn metrics_report(pred: &[f64], mos: &[f64], with_rmse: bool) -> Result<MetricsReport> {
    let pc = pearson(pred, mos)?;
    let sc = spearman(pred, mos)?;
    let mapped = if with_rmse { Some(rmse_mapped(pred, mos)?) } else { None };
    Ok(MetricsReport {
        pc,
        sc,
        rmse_mapped: mapped.map(|m| m.rmse),
        mapping: mapped.map(|m| m.mapping),
        constant_prediction: mapped.is_some_and(|m| m.constant_prediction),
        n: pred.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Direct MOS prediction.
    Nr,
    /// Distance to clean references; RMSE is not reported.
    Nmr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ScoreKind,
    pub overall: MetricsReport,
    pub per_family: BTreeMap<String, MetricsReport>,
    /// Families whose correlation is undefined (too few samples or constant).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub undefined_families: Vec<String>,
}

pub fn eval_report(mode: ScoreKind, pred: &[f64], mos: &[f64], families: &[String]) -> Result<EvalReport> {
    if families.len() != pred.len() {
        return Err(Error::dim("eval_report", "one family tag per sample required"));
    }
    let with_rmse = mode == ScoreKind::Nr;
    let overall = metrics_report(pred, mos, with_rmse)?;
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((p, m), f) in pred.iter().zip(mos).zip(families) {
        let e = groups.entry(f.as_str()).or_default();
        e.0.push(*p);
        e.1.push(*m);
    }
    let mut per_family = BTreeMap::new();
    let mut undefined_families = Vec::new();
    for (fam, (p, m)) in groups {
        match metrics_report(&p, &m, with_rmse) {
            Ok(r) => {
                per_family.insert(fam.to_string(), r);
            }
            Err(Error::UndefinedCorrelation(_)) => undefined_families.push(fam.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        mode,
        overall,
        per_family,
        undefined_families,
    })
}
