//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain values and returns a JSON string, or a string
//! error that the page shows as-is.

pub mod demo;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scoreq_core::loss::{MarginSpec, SignMode};
use scoreq_core::training::LossMode;

fn json<T: Serialize>(r: scoreq_core::Result<T>) -> Result<String, String> {
    let v = r.map_err(|e| e.to_string())?;
    serde_json::to_string(&v).map_err(|e| e.to_string())
}

/// Valid triplets for comma-separated labels. `margin_mode` is `fixed`,
/// `adaptive` or `adaptive_literal`; `param` is the margin or kappa.
/// `points` is an optional JSON array of `[x, y]` pairs.
#[wasm_bindgen]
pub fn explore_triplets(labels: &str, margin_mode: &str, param: f64, points: &str, seed: u64) -> Result<String, String> {
    let spec = match margin_mode {
        "fixed" => MarginSpec::fixed(param),
        "adaptive" => MarginSpec::adaptive(param),
        "adaptive_literal" => MarginSpec::adaptive(param).with_sign_mode(SignMode::Literal),
        other => return Err(format!("unknown margin mode {other:?}")),
    };
    let points = if points.trim().is_empty() {
        None
    } else {
        Some(serde_json::from_str::<Vec<[f64; 2]>>(points).map_err(|e| format!("points: {e}"))?)
    };
    json(demo::parse_labels(labels).and_then(|y| demo::explore(&y, &spec, points, seed)))
}

/// Trains `l2`, `scoreq_fixed` or `scoreq_adaptive` on a small synthetic
/// corpus with family `holdout` left out.
#[wasm_bindgen]
pub fn train_demo(loss: &str, holdout: &str, epochs: usize, seed: u64) -> Result<String, String> {
    let loss: LossMode = loss.parse().map_err(|e: scoreq_core::Error| e.to_string())?;
    json(demo::train_demo(loss, holdout, epochs, seed))
}

#[wasm_bindgen]
pub fn bootstrap_demo(n: usize, noise_a: f64, noise_b: f64, iterations: usize, seed: u64) -> Result<String, String> {
    json(demo::simulate_bootstrap(n, noise_a, noise_b, iterations, seed))
}
