//! Run configuration: TOML with sections; unknown keys are errors.
//!
//! Data paths (`data.dir`, `manifest`, swap manifests) resolve against the
//! data root: `data_root`, else `$METAAF_DATA_ROOT`, else the working
//! directory. Other paths resolve against the working directory.

use std::path::{Path, PathBuf};

use metaaf_core::aec::FilterConfig;
use metaaf_core::kalman::{default_grid, KalmanConfig};
use metaaf_core::kws::KwsConfig;
use metaaf_core::scene::{SceneConfig, ToyPreset, BUILTIN_LABELS};
use metaaf_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATA_ROOT_VAR: &str = "METAAF_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    /// Manifest CSV; `labels.txt` must sit next to it.
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub kws: KwsSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub kalman: KalmanSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub swap: SwapSection,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Output directory of `gen-data`.
    pub dir: PathBuf,
    pub scenes: usize,
    pub classes: usize,
    pub labels: Vec<String>,
    pub len_s: f64,
    pub ser_db_min: f64,
    pub ser_db_max: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub noise_snr_db: Option<f64>,
    /// Room response length; defaults to the filter length.
    pub rir_taps: Option<usize>,
    /// Store playback and keywords as WAV files instead of seeds.
    pub write_audio: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("toy"),
            scenes: 200,
            classes: 2,
            labels: BUILTIN_LABELS.iter().map(|s| s.to_string()).collect(),
            len_s: 1.0,
            ser_db_min: -25.0,
            ser_db_max: 0.0,
            train_frac: 0.6,
            val_frac: 0.2,
            noise_snr_db: None,
            rir_taps: None,
            write_audio: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub window: usize,
    pub blocks: usize,
    pub constrain_gradient: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { window: 64, blocks: 2, constrain_gradient: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub hidden: usize,
    pub group_size: usize,
    pub group_hop: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { hidden: 8, group_size: 5, group_hop: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KwsSize {
    Toy,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KwsSection {
    pub size: KwsSize,
    /// Trained classifier used by canceller training and evaluation.
    pub checkpoint: Option<PathBuf>,
}

impl Default for KwsSection {
    fn default() -> Self {
        Self { size: KwsSize::Toy, checkpoint: None }
    }
}

/// Overrides of the preset for the training command being run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub kws_lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub clip_norm: Option<f64>,
    pub lr_patience: Option<usize>,
    pub stop_patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub window_min: Option<usize>,
    pub window_max: Option<usize>,
    /// Optimizer checkpoint to start joint training from.
    pub init: Option<PathBuf>,
    /// `last.ckpt` of an interrupted run.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanSection {
    pub transition: Vec<f64>,
    pub process_noise: Vec<f64>,
    pub smoothing: Vec<f64>,
    pub initial_variance: f64,
    /// Tuned settings written by `tune-kf`.
    pub tuned: Option<PathBuf>,
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self {
            transition: vec![0.95, 0.99, 0.999],
            process_noise: vec![1e-4, 1e-3, 1e-2],
            smoothing: vec![0.9, 0.99],
            initial_variance: 1.0,
            tuned: None,
        }
    }
}

impl KalmanSection {
    pub fn grid(&self) -> Vec<KalmanConfig> {
        let mut grid = Vec::new();
        for &transition in &self.transition {
            for &process_noise in &self.process_noise {
                for &smoothing in &self.smoothing {
                    grid.push(KalmanConfig {
                        transition,
                        process_noise,
                        smoothing,
                        initial_variance: self.initial_variance,
                    });
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fold: String,
    /// Any of `no-echo`, `no-aec`, `diag-kf`, `meta`, `ct-meta`.
    pub cancellers: Vec<String>,
    pub meta: Option<PathBuf>,
    pub ct_meta: Option<PathBuf>,
    /// ERLE warm-up in samples; defaults to the filter length.
    pub warmup: Option<usize>,
    /// Resamples of the significance test.
    pub trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fold: "test".into(),
            cancellers: ["no-echo", "no-aec", "diag-kf", "meta", "ct-meta"].map(String::from).to_vec(),
            meta: None,
            ct_meta: None,
            warmup: None,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapEntry {
    pub name: String,
    pub meta: PathBuf,
    pub kws: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapSection {
    pub entries: Vec<SwapEntry>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    /// The config without its output location, as hashed into run records.
    pub fn input_toml(&self) -> String {
        Self { out_dir: None, ..self.clone() }.to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        self.filter_config().validate()?;
        let d = &self.data;
        if d.scenes == 0 {
            return Err(Error::Config("data.scenes must be positive".into()));
        }
        if d.ser_db_min > d.ser_db_max {
            return Err(Error::Config("data.ser_db_min exceeds data.ser_db_max".into()));
        }
        if !(0.0..=1.0).contains(&(d.train_frac + d.val_frac)) || d.train_frac < 0.0 || d.val_frac < 0.0 {
            return Err(Error::Config("fold fractions must be non-negative and sum to at most 1".into()));
        }
        if self.kalman.grid().is_empty() {
            return Err(Error::Config("Kalman grid is empty".into()));
        }
        if !["train", "val", "test"].contains(&self.eval.fold.as_str()) {
            return Err(Error::Config(format!("unknown fold {:?}", self.eval.fold)));
        }
        for c in &self.eval.cancellers {
            if !["no-echo", "no-aec", "diag-kf", "meta", "ct-meta"].contains(&c.as_str()) {
                return Err(Error::Config(format!("unknown canceller {c:?}")));
            }
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root().join(p)
        }
    }

    pub fn manifest_path(&self) -> Result<PathBuf> {
        match &self.manifest {
            Some(m) => Ok(self.data_path(m)),
            None => Ok(self.data_path(&self.data.dir).join("manifest.csv")),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out_dir.clone().ok_or_else(|| Error::Config("out_dir is required for this command".into()))
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            window: self.filter.window,
            blocks: self.filter.blocks,
            constrain_gradient: self.filter.constrain_gradient,
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        let f = self.filter_config();
        let taps = self.data.rir_taps.unwrap_or(f.max_taps());
        SceneConfig { noise_snr_db: self.data.noise_snr_db, ..SceneConfig::for_taps(taps) }
    }

    /// Default ERLE warm-up: `B` hops, the filter length.
    pub fn warmup(&self) -> usize {
        self.eval.warmup.unwrap_or(self.filter_config().max_taps())
    }

    pub fn kws_config(&self, classes: usize) -> KwsConfig {
        match self.kws.size {
            KwsSize::Toy => KwsConfig::toy(classes),
            KwsSize::Full => KwsConfig::new(classes),
        }
    }

    pub fn toy_preset(&self) -> ToyPreset {
        let d = &self.data;
        ToyPreset {
            len_s: d.len_s,
            ser_db: (d.ser_db_min, d.ser_db_max),
            split: (d.train_frac, d.val_frac),
            ..ToyPreset::new(d.scenes, d.classes, self.seed)
        }
    }

    /// `preset` with the `[train]` overrides applied.
    pub fn train_config(&self, preset: TrainConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let mut c = TrainConfig { seed: self.seed, ..preset };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = t.$f { c.$f = v; } )* };
        }
        take!(lambda, batch_size, lr, kws_lr, beta1, beta2, eps, clip_norm, lr_patience, stop_patience, max_epochs);
        if let Some(v) = t.window_min {
            c.window.0 = v;
        }
        if let Some(v) = t.window_max {
            c.window.1 = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("").expect("empty config is valid")
    }
}

/// The grid used when no `[kalman]` lists are given.
pub fn builtin_grid() -> Vec<KalmanConfig> {
    default_grid()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1").is_err());
        assert!(RunConfig::parse("[filter]\nwindow = 63").is_err());
        let c = RunConfig::parse("seed = 9\n[train]\nlr = 0.5\nwindow_max = 12").unwrap();
        let t = c.train_config(TrainConfig::meta(0.0, 0)).unwrap();
        assert_eq!((t.seed, t.lr, t.window), (9, 0.5, (8, 12)));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::parse("manifest = \"m.csv\"\n[eval]\ncancellers = [\"meta\"]").unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::default().kalman.grid(), builtin_grid());
    }
}
