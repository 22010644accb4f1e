//! Manifest rows and fold bookkeeping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::surrogate::surrogate_keyword;
use super::SAMPLE_RATE;
use crate::error::{config, Error, Result};

/// Where a signal comes from: a synthesis seed or an audio file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Seed(u64),
    Path(String),
}

impl Source {
    /// An all-digit cell is a seed; anything else is a path.
    pub fn parse(cell: &str) -> Self {
        match cell.parse::<u64>() {
            Ok(s) => Source::Seed(s),
            Err(_) => Source::Path(cell.to_string()),
        }
    }
}

impl core::fmt::Display for Source {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Source::Seed(s) => write!(f, "{s}"),
            Source::Path(p) => f.write_str(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Val, Fold::Test];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Fold::Train),
            "val" => Ok(Fold::Val),
            "test" => Ok(Fold::Test),
            other => Err(config!("unknown fold {other:?}")),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub playback: Source,
    pub keyword: Source,
    pub class: usize,
    pub fold: Fold,
    pub ser_db: f64,
    pub shift: usize,
    pub len_s: f64,
}

/// Rejects duplicate ids and reused keyword utterances. A synthesized
/// utterance is identified by its class and seed, a recorded one by its path.
pub fn check_rows(rows: &[ManifestRow]) -> Result<()> {
    let mut ids = BTreeMap::new();
    let mut utterances: BTreeMap<(Option<usize>, &Source), (&str, Fold)> = BTreeMap::new();
    for r in rows {
        if ids.insert(r.id.as_str(), ()).is_some() {
            return Err(config!("duplicate scene id {}", r.id));
        }
        let key = match &r.keyword {
            Source::Seed(_) => (Some(r.class), &r.keyword),
            Source::Path(_) => (None, &r.keyword),
        };
        if let Some((first, fold)) = utterances.insert(key, (r.id.as_str(), r.fold)) {
            return Err(if fold != r.fold {
                Error::FoldLeakage(format!(
                    "keyword {} used in {} ({}) and {} ({})",
                    r.keyword,
                    first,
                    fold.as_str(),
                    r.id,
                    r.fold.as_str()
                ))
            } else {
                config!("keyword {} used twice ({first}, {})", r.keyword, r.id)
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPreset {
    pub scenes: usize,
    pub classes: usize,
    pub seed: u64,
    pub len_s: f64,
    pub ser_db: (f64, f64),
    /// Fractions of scenes in the train and validation folds; the rest is test.
    pub split: (f64, f64),
}

impl ToyPreset {
    pub fn new(scenes: usize, classes: usize, seed: u64) -> Self {
        Self { scenes, classes, seed, len_s: 1.0, ser_db: (-25.0, 0.0), split: (0.6, 0.2) }
    }
}

/// Class-balanced synthetic manifest. Scenes are dealt to folds in
/// consecutive groups of one scene per class, so every fold stays balanced.
pub fn toy_manifest(preset: &ToyPreset, labels: &[String]) -> Result<Vec<ManifestRow>> {
    if preset.scenes == 0 {
        return Err(config!("toy preset asks for zero scenes"));
    }
    if preset.classes == 0 || preset.classes > labels.len() {
        return Err(config!("{} classes requested with {} labels", preset.classes, labels.len()));
    }
    let (lo, hi) = preset.ser_db;
    if lo > hi {
        return Err(config!("empty SER range {lo}..{hi}"));
    }
    let len = (preset.len_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
    let groups = preset.scenes.div_ceil(preset.classes);
    let n_train = (groups as f64 * preset.split.0).round() as usize;
    let n_val = (groups as f64 * preset.split.1).round() as usize;
    (0..preset.scenes)
        .map(|i| {
            let class = i % preset.classes;
            let g = i / preset.classes;
            let fold = if g < n_train {
                Fold::Train
            } else if g < n_train + n_val {
                Fold::Val
            } else {
                Fold::Test
            };
            let u_seed = rng.gen::<u32>() as u64;
            let s_seed = rng.gen::<u32>() as u64;
            let ser_db = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            let kw_len = surrogate_keyword(&labels[class], s_seed).len();
            if kw_len > len {
                return Err(config!("scenes of {} s cannot hold a keyword", preset.len_s));
            }
            let shift = rng.gen_range(0..=len - kw_len);
            Ok(ManifestRow {
                id: format!("toy-{i:05}"),
                playback: Source::Seed(u_seed),
                keyword: Source::Seed(s_seed),
                class,
                fold,
                ser_db,
                shift,
                len_s: preset.len_s,
            })
        })
        .collect()
}
