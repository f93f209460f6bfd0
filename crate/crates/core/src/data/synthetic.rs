//! Seeded synthetic quality corpus.
//!
//! Clean frames are drawn from a fixed Gaussian mixture. Each degradation
//! family applies one parametric corruption at a severity `s ∈ [0, 1]`, and
//! its quality label follows a family-specific strictly increasing response
//! `q(s)`: `y = 1 + 4·(1 − q(s)) + noise`, clamped to `[1, 5]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{assign_split, LabeledSample, Split, SplitFractions, MOS_MAX, MOS_MIN};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    AdditiveNoise,
    FrameDropout,
    Clipping,
    Smoothing,
    ChannelScaling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Linear,
    Convex,
    Concave,
    Sigmoid,
    Stepped,
}

impl Response {
    /// Strictly increasing map from [0, 1] onto [0, 1].
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Response::Linear => s,
            Response::Convex => s * s,
            Response::Concave => s.sqrt(),
            Response::Sigmoid => {
                let f = |x: f64| 1.0 / (1.0 + (-10.0 * (x - 0.5)).exp());
                (f(s) - f(0.0)) / (f(1.0) - f(0.0))
            }
            Response::Stepped => {
                let w = 4.0 * std::f64::consts::PI;
                s - (w * s).sin() / w
            }
        }
    }
}

const CORRUPTIONS: [Corruption; 5] = [
    Corruption::AdditiveNoise,
    Corruption::FrameDropout,
    Corruption::Clipping,
    Corruption::Smoothing,
    Corruption::ChannelScaling,
];

const RESPONSES: [Response; 5] = [
    Response::Linear,
    Response::Convex,
    Response::Concave,
    Response::Sigmoid,
    Response::Stepped,
];

/// Family tag for family index `f`: `A`, `B`, ..., `Z`, `F26`, ...
pub fn family_tag(f: usize) -> String {
    if f < 26 {
        ((b'A' + f as u8) as char).to_string()
    } else {
        format!("F{f}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_families: usize,
    pub samples_per_family: usize,
    pub frames: usize,
    pub input_dim: usize,
    pub seed: u64,
    pub holdout_families: Vec<String>,
    pub mos_noise_sd: f64,
    pub split: SplitFractions,
    /// Number of mixture components in the clean frame distribution.
    pub clean_components: usize,
    pub n_references: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_families: 5,
            samples_per_family: 400,
            frames: 24,
            input_dim: 16,
            seed: 0,
            holdout_families: Vec::new(),
            mos_noise_sd: 0.15,
            split: SplitFractions { test: 0.2, val: 0.2 },
            clean_components: 4,
            n_references: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_families < 2 {
            return Err(Error::Config("n_families must be >= 2".into()));
        }
        if self.frames == 0 || self.input_dim < 2 || self.clean_components == 0 {
            return Err(Error::Config(
                "frames, input_dim (>= 2) and clean_components must be positive".into(),
            ));
        }
        if !(self.mos_noise_sd >= 0.0) {
            return Err(Error::Config("mos_noise_sd must be >= 0".into()));
        }
        let fams: Vec<String> = (0..self.n_families).map(family_tag).collect();
        for h in &self.holdout_families {
            if !fams.contains(h) {
                return Err(Error::Config(format!("holdout family {h:?} does not exist")));
            }
        }
        if self.holdout_families.len() >= self.n_families {
            return Err(Error::Config("holdout must leave at least one training family".into()));
        }
        let f = self.split;
        if !(0.0..1.0).contains(&f.test) || !(0.0..1.0).contains(&f.val) {
            return Err(Error::Config("split fractions must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn family(&self, f: usize) -> (String, Corruption, Response) {
        (family_tag(f), CORRUPTIONS[f % 5], RESPONSES[f % 5])
    }
}

struct CleanSource {
    means: Vec<Vec<f64>>,
    sd: f64,
}

impl CleanSource {
    fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let means = (0..spec.clean_components)
            .map(|_| (0..spec.input_dim).map(|_| normal.sample(rng)).collect())
            .collect();
        Self { means, sd: 0.5 }
    }

    fn sample(&self, frames: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let d = self.means[0].len();
        let noise = Normal::new(0.0, self.sd).unwrap();
        let mut x = Matrix::zeros(frames, d);
        for t in 0..frames {
            let c = rng.random_range(0..self.means.len());
            for (v, m) in x.row_mut(t).iter_mut().zip(&self.means[c]) {
                *v = m + noise.sample(rng);
            }
        }
        x
    }
}

fn corrupt(x: &mut Matrix, kind: Corruption, s: f64, rng: &mut ChaCha8Rng) {
    let (t, d) = x.shape();
    match kind {
        Corruption::AdditiveNoise => {
            let n = Normal::new(0.0, 1.5 * s + 1e-12).unwrap();
            x.data_mut().iter_mut().for_each(|v| *v += n.sample(rng));
        }
        Corruption::FrameDropout => {
            for r in 0..t {
                if rng.random::<f64>() < 0.8 * s {
                    x.row_mut(r).fill(0.0);
                }
            }
        }
        Corruption::Clipping => {
            let c = 3.0 * (1.0 - 0.85 * s);
            x.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
        Corruption::Smoothing => {
            let a = 0.9 * s;
            for r in 1..t {
                for c in 0..d {
                    x[(r, c)] = (1.0 - a) * x[(r, c)] + a * x[(r - 1, c)];
                }
            }
        }
        Corruption::ChannelScaling => {
            let gain = 1.0 - 0.9 * s;
            for r in 0..t {
                for v in &mut x.row_mut(r)[..d / 2] {
                    *v *= gain;
                }
            }
        }
    }
}

/// Noiseless quality label of a family at severity `s`.
pub fn noiseless_mos(response: Response, s: f64) -> f64 {
    MOS_MIN + (MOS_MAX - MOS_MIN) * (1.0 - response.eval(s))
}

/// Degraded samples for every family, with splits assigned.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean = CleanSource::new(spec, &mut rng);
    let label_noise = Normal::new(0.0, spec.mos_noise_sd.max(1e-300)).unwrap();
    let mut out = Vec::with_capacity(spec.n_families * spec.samples_per_family);
    for f in 0..spec.n_families {
        let (tag, kind, response) = spec.family(f);
        for i in 0..spec.samples_per_family {
            let s: f64 = rng.random();
            let mut x = clean.sample(spec.frames, &mut rng);
            corrupt(&mut x, kind, s, &mut rng);
            let noise = if spec.mos_noise_sd > 0.0 {
                label_noise.sample(&mut rng)
            } else {
                0.0
            };
            let mos = (noiseless_mos(response, s) + noise).clamp(MOS_MIN, MOS_MAX);
            let id = format!("{tag}-{i:05}");
            let split = assign_split(&id, &tag, &spec.holdout_families, spec.split);
            out.push(LabeledSample {
                id,
                features: x,
                mos,
                degradation: tag.clone(),
                severity: Some(s),
                split,
            });
        }
    }
    Ok(out)
}

/// Clean samples drawn from the same mixture, for distance-based scoring.
/// They come from a stream independent of the corpus.
pub fn generate_references(spec: &SyntheticSpec) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean = CleanSource::new(spec, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c1ea_0000_0001);
    Ok((0..spec.n_references)
        .map(|i| LabeledSample {
            id: format!("ref-{i:05}"),
            features: clean.sample(spec.frames, &mut rng),
            mos: MOS_MAX,
            degradation: "clean".into(),
            severity: Some(0.0),
            split: Split::Ref,
        })
        .collect())
}
