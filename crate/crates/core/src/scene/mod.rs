//! Scene construction: room responses, echo mixtures at a controlled
//! signal-to-echo ratio, and fold bookkeeping.

mod manifest;
mod surrogate;

pub use manifest::{check_rows, toy_manifest, Fold, ManifestRow, Source, ToyPreset};
pub use surrogate::{recipe, surrogate_keyword, synth_playback, Recipe, BUILTIN_LABELS, WORD_RMS};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: usize = 16_000;

/// 64-bit FNV-1a, used to derive per-scene seeds from identifiers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Exponentially decaying white noise with a 60 dB decay time of `rt60_s`,
/// normalized to unit energy. A non-positive decay time yields a unit impulse.
pub fn synth_rir(seed: u64, taps: usize, rt60_s: f64) -> Vec<f64> {
    let mut w = vec![0.0; taps];
    if taps == 0 {
        return w;
    }
    if rt60_s <= 0.0 {
        w[0] = 1.0;
        return w;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 3.0 * core::f64::consts::LN_10 / (rt60_s * SAMPLE_RATE as f64);
    for (n, v) in w.iter_mut().enumerate() {
        let g: f64 = rng.sample(StandardNormal);
        *v = g * (-rate * n as f64).exp();
    }
    let e = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if e > 0.0 {
        w.iter_mut().for_each(|v| *v /= e);
    } else {
        w[0] = 1.0;
    }
    w
}

/// Causal convolution truncated to the length of `x`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (j, &hj) in h.iter().enumerate().take(x.len()) {
        if hj == 0.0 {
            continue;
        }
        for (yn, xn) in y[j..].iter_mut().zip(x) {
            *yn += hj * xn;
        }
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub n: Vec<f64>,
    /// Scaled keyword placed at `shift`, full scene length.
    pub s: Vec<f64>,
    pub echo: Vec<f64>,
    pub d: Vec<f64>,
    pub class: usize,
    pub ser_db: f64,
    pub shift: usize,
    pub keyword_len: usize,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// `true` for samples outside the keyword and past the first `warmup` samples.
    pub fn keyword_free_mask(&self, warmup: usize) -> Vec<bool> {
        (0..self.len())
            .map(|i| i >= warmup && !(self.shift..self.shift + self.keyword_len).contains(&i))
            .collect()
    }
}

/// Mixes `d = u * w + n + g s`, with `g` chosen so that the keyword-to-echo
/// energy ratio over the keyword's support equals `ser_db`.
pub fn make_scene(
    id: &str,
    u: &[f64],
    keyword: &[f64],
    w: &[f64],
    noise: Option<&[f64]>,
    ser_db: f64,
    shift: usize,
    class: usize,
) -> Result<Scene> {
    let len = u.len();
    if keyword.is_empty() || shift + keyword.len() > len {
        return Err(Error::Generation(alloc::format!(
            "{id}: keyword of {} samples at {shift} does not fit {len} samples",
            keyword.len()
        )));
    }
    if let Some(n) = noise {
        if n.len() != len {
            return Err(Error::Generation(alloc::format!("{id}: noise length {} != {len}", n.len())));
        }
    }
    let echo = convolve(u, w);
    let support = shift..shift + keyword.len();
    let echo_energy: f64 = echo[support.clone()].iter().map(|v| v * v).sum();
    let kw_energy: f64 = keyword.iter().map(|v| v * v).sum();
    if echo_energy <= 0.0 {
        return Err(Error::Generation(alloc::format!("{id}: echo is silent over the keyword")));
    }
    if kw_energy <= 0.0 {
        return Err(Error::Generation(alloc::format!("{id}: keyword is silent")));
    }
    let gain = (echo_energy * 10f64.powf(ser_db / 10.0) / kw_energy).sqrt();
    let mut s = vec![0.0; len];
    for (o, k) in s[support].iter_mut().zip(keyword) {
        *o = gain * k;
    }
    let n = noise.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
    let d = (0..len).map(|i| echo[i] + n[i] + s[i]).collect();
    Ok(Scene {
        id: id.into(),
        u: u.to_vec(),
        w: w.to_vec(),
        n,
        s,
        echo,
        d,
        class,
        ser_db,
        shift,
        keyword_len: keyword.len(),
    })
}

/// Generator settings shared by every scene of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub rir_taps: usize,
    pub rt60_s: f64,
    /// Additive white noise relative to the echo power; off when `None`.
    pub noise_snr_db: Option<f64>,
}

impl SceneConfig {
    /// Room responses filling a `taps`-long filter, decaying 60 dB over it.
    pub fn for_taps(taps: usize) -> Self {
        Self { rir_taps: taps, rt60_s: taps as f64 / SAMPLE_RATE as f64, noise_snr_db: None }
    }
}

/// Audio behind one manifest row, resolved by the caller for path sources.
pub struct RowAudio<'a> {
    pub playback: Option<&'a [f64]>,
    pub keyword: Option<&'a [f64]>,
}

/// Builds the scene described by `row`. Seed sources are synthesized here;
/// path sources must be supplied in `audio`.
pub fn scene_from_row(row: &ManifestRow, labels: &[String], audio: RowAudio<'_>, cfg: &SceneConfig) -> Result<Scene> {
    let len = (row.len_s * SAMPLE_RATE as f64).round() as usize;
    let label = labels.get(row.class).ok_or_else(|| {
        Error::Config(alloc::format!("{}: class {} outside the {}-label vocabulary", row.id, row.class, labels.len()))
    })?;
    let missing = |what: &str| Error::Config(alloc::format!("{}: {what} audio not supplied", row.id));
    let mut u = match (&row.playback, audio.playback) {
        (Source::Seed(s), _) => synth_playback(*s, len),
        (Source::Path(_), Some(a)) => a.to_vec(),
        (Source::Path(_), None) => return Err(missing("playback")),
    };
    u.resize(len, 0.0);
    let keyword = match (&row.keyword, audio.keyword) {
        (Source::Seed(s), _) => surrogate_keyword(label, *s),
        (Source::Path(_), Some(a)) => a.to_vec(),
        (Source::Path(_), None) => return Err(missing("keyword")),
    };
    let seed = fnv1a(row.id.as_bytes());
    let w = synth_rir(seed, cfg.rir_taps, cfg.rt60_s);
    let noise = cfg.noise_snr_db.map(|snr| {
        let echo = convolve(&u, &w);
        let p = echo.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let sd = (p * 10f64.powf(-snr / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006e_6f69_7365);
        (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()
    });
    make_scene(&row.id, &u, &keyword, &w, noise.as_deref(), row.ser_db, row.shift, row.class)
}

/// A playback-free training example: the scene's scaled keyword and noise
/// plus background babble (independent of the playback) 0 to 60 dB and a
/// white-noise floor 20 to 80 dB below the word level.
pub fn clean_example(scene: &Scene) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(scene.id.as_bytes()) ^ 0x0063_6c65_616e);
    let support = &scene.s[scene.shift..scene.shift + scene.keyword_len];
    let rms = (support.iter().map(|v| v * v).sum::<f64>() / support.len() as f64).sqrt();
    let babble = synth_playback(rng.gen(), scene.len());
    let gb = rms / WORD_RMS * 10f64.powf(-rng.gen_range(0.0..60.0) / 20.0);
    let sd = rms * 10f64.powf(-rng.gen_range(20.0..80.0) / 20.0);
    (0..scene.len())
        .map(|i| scene.s[i] + scene.n[i] + gb * babble[i] + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
