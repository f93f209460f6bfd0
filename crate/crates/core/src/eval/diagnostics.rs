use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::{kmeans, nmi, KMeansConfig};
use super::pca::pca2;
use super::stats::pearson;
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{nmr_scores, Layer, ModelParams, ReferenceSet};
use crate::numerics::FeatureSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub mos: f64,
    pub degradation: String,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub layer: Layer,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub nmi: f64,
    /// Pearson correlation between mean reference distance and MOS.
    pub pc_dist_mos: f64,
    pub explained_variance: [f64; 2],
    pub rank_deficient: bool,
    pub inertia: f64,
    pub points: Vec<PointRow>,
}

impl DiagnosticsReport {
    pub fn pca_coords(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn cluster_assignments(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.cluster).collect()
    }

    pub fn embeddings_csv(&self) -> String {
        let mut out = String::from("id,x,y,mos,degradation,cluster\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{},{},{}", p.id, p.x, p.y, p.mos, p.degradation, p.cluster);
        }
        out
    }

    pub fn write_embeddings_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.embeddings_csv()).map_err(|e| Error::io(path, e))
    }
}

/// PCA projection, k-means clustering against degradation tags and the
/// distance-to-reference correlation with MOS, all at `layer`.
/// `k` defaults to the number of distinct degradation tags.
pub fn diagnose_embeddings(
    params: &ModelParams,
    samples: &[LabeledSample],
    refs: &[FeatureSequence],
    layer: Layer,
    k: Option<usize>,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let mut tags: Vec<&str> = samples.iter().map(|s| s.degradation.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();
    let k = k.unwrap_or(tags.len().max(1));
    if samples.len() < k.max(3) {
        return Err(Error::Config(format!(
            "diagnostics need at least {} samples, got {}",
            k.max(3),
            samples.len()
        )));
    }
    let xs: Vec<FeatureSequence> = samples.iter().map(|s| s.features.clone()).collect();
    let z = params.embed_batch(&xs, layer)?;
    let pca = pca2(&z)?;
    let km = kmeans(&z, &KMeansConfig { k, seed, ..Default::default() })?;
    let families: Vec<&str> = samples.iter().map(|s| s.degradation.as_str()).collect();
    let nmi = nmi(&km.assignments, &families)?;

    let reference = ReferenceSet::from_samples(params, refs, layer)?;
    let dist = nmr_scores(params, &xs, &reference)?;
    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let pc_dist_mos = pearson(&dist, &mos)?;

    let points = samples
        .iter()
        .enumerate()
        .map(|(i, s)| PointRow {
            id: s.id.clone(),
            x: pca.coords[(i, 0)],
            y: pca.coords[(i, 1)],
            mos: s.mos,
            degradation: s.degradation.clone(),
            cluster: km.assignments[i],
        })
        .collect();
    Ok(DiagnosticsReport {
        layer,
        n: samples.len(),
        k,
        seed,
        nmi,
        pc_dist_mos,
        explained_variance: pca.explained_variance,
        rank_deficient: pca.rank_deficient,
        inertia: km.inertia,
        points,
    })
}
