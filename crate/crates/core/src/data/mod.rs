//! Labelled samples, the seeded synthetic degradation corpus, family-based
//! splits and the CSV manifest format.

mod manifest;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureSequence;

pub use manifest::{load_manifest, load_severities, write_corpus, MANIFEST_HEADER};
pub use synthetic::{family_tag, generate_corpus, generate_references, noiseless_mos, Corruption, Response, SyntheticSpec};

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Clean non-matching references.
    Ref,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Ref => "ref",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "ref" => Ok(Split::Ref),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureSequence,
    pub mos: f64,
    pub degradation: String,
    /// Ground-truth corruption strength; only known for synthetic data.
    pub severity: Option<f64>,
    pub split: Split,
}

/// Share of non-holdout samples routed to each split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    /// Fraction sent to an in-domain test split before the train/val cut.
    pub test: f64,
    /// Fraction of the remainder sent to validation.
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { test: 0.0, val: 0.2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// FNV-1a followed by the splitmix64 finalizer, used for split assignment
/// that depends only on the sample id.
fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Uniform in [0, 1), derived from the id alone.
pub fn id_unit(id: &str) -> f64 {
    (stable_hash(id) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn assign_split(id: &str, family: &str, holdout: &[String], fractions: SplitFractions) -> Split {
    if holdout.iter().any(|h| h == family) {
        return Split::Test;
    }
    let u = id_unit(id);
    if u < fractions.test {
        Split::Test
    } else if u < fractions.test + (1.0 - fractions.test) * fractions.val {
        Split::Val
    } else {
        Split::Train
    }
}

/// Routes held-out families entirely to test and splits the rest by id hash.
pub fn split_by_family(
    samples: Vec<LabeledSample>,
    holdout: &[String],
    fractions: SplitFractions,
) -> Result<Splits> {
    if holdout.is_empty() {
        return Err(Error::Config("holdout must name at least one family".into()));
    }
    let any_training = samples
        .iter()
        .any(|s| !holdout.iter().any(|h| *h == s.degradation));
    if !samples.is_empty() && !any_training {
        return Err(Error::Config(
            "holdout covers every family; nothing left to train on".into(),
        ));
    }
    let mut out = Splits::default();
    for mut s in samples {
        s.split = assign_split(&s.id, &s.degradation, holdout, fractions);
        match s.split {
            Split::Train => out.train.push(s),
            Split::Val => out.val.push(s),
            Split::Test | Split::Ref => out.test.push(s),
        }
    }
    Ok(out)
}

/// Groups samples by their stored `split` field.
pub fn partition(samples: Vec<LabeledSample>) -> (Splits, Vec<LabeledSample>) {
    let mut out = Splits::default();
    let mut refs = Vec::new();
    for s in samples {
        match s.split {
            Split::Train => out.train.push(s),
            Split::Val => out.val.push(s),
            Split::Test => out.test.push(s),
            Split::Ref => refs.push(s),
        }
    }
    (out, refs)
}
