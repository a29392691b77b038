use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BcCase, SampleKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::config(format!("unknown split `{s}` (train|val|test)"))),
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

/// Named train/val/test assignment.
///
/// `Baseline` is a seeded 60/20/20 shuffle by sample; the other presets hold
/// out one generalization quantity by index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPreset {
    Baseline,
    Geometry,
    Load,
    Bc,
}

impl SplitPreset {
    pub const ALL: [SplitPreset; 4] = [Self::Baseline, Self::Geometry, Self::Load, Self::Bc];

    /// Rule-based assignment of one sample; `None` for `Baseline`, which is
    /// not a per-sample rule.
    pub fn assign(self, key: &SampleKey) -> Option<Part> {
        match self {
            Self::Baseline => None,
            Self::Geometry => match key.geometry_id {
                1..=614 => Some(Part::Train),
                615..=819 => Some(Part::Val),
                820..=1024 => Some(Part::Test),
                _ => None,
            },
            Self::Load => match key.load_case {
                1..=8 => Some(Part::Train),
                9..=11 => Some(Part::Val),
                12..=14 => Some(Part::Test),
                _ => None,
            },
            Self::Bc => match key.bc_case {
                BcCase::E2 | BcCase::E2E3 | BcCase::E1E2 => Some(Part::Train),
                BcCase::E3 => Some(Part::Val),
                BcCase::E1E5 => Some(Part::Test),
            },
        }
    }
}

impl FromStr for SplitPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "geometry" => Ok(Self::Geometry),
            "load" => Ok(Self::Load),
            "bc" => Ok(Self::Bc),
            _ => Err(Error::config(format!(
                "unknown preset `{s}` (baseline|geometry|load|bc)"
            ))),
        }
    }
}

impl fmt::Display for SplitPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Geometry => "geometry",
            Self::Load => "load",
            Self::Bc => "bc",
        })
    }
}

/// Sample indices (into the container order) for each part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub preset: SplitPreset,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn part(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn is_train(&self, index: usize) -> bool {
        self.train.binary_search(&index).is_ok()
    }
}

const BASELINE_STREAM: u64 = 0xBA5E;

/// Resolve a preset against the sample list.
pub fn make_split(preset: SplitPreset, keys: &[SampleKey], seed: u64) -> SplitSpec {
    let mut spec = SplitSpec {
        preset,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    if preset == SplitPreset::Baseline {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(BASELINE_STREAM);
        order.shuffle(&mut rng);
        let held = keys.len() / 5;
        spec.val = order[..held].to_vec();
        spec.test = order[held..2 * held].to_vec();
        spec.train = order[2 * held..].to_vec();
    } else {
        for (i, key) in keys.iter().enumerate() {
            match preset.assign(key) {
                Some(Part::Train) => spec.train.push(i),
                Some(Part::Val) => spec.val.push(i),
                Some(Part::Test) => spec.test.push(i),
                None => {}
            }
        }
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    spec
}
