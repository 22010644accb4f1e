//! Deterministic word-like test signals standing in for recorded keywords
//! and playback.
//!
//! A label selects a pitch track (start and end fundamental) and a syllable
//! count; each utterance seed jitters duration, pitch and harmonic balance.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv1a, SAMPLE_RATE};

/// Labels with hand-picked recipes. Other labels get a recipe derived from their name.
pub const BUILTIN_LABELS: [&str; 8] = ["rise", "fall", "drone", "lift", "dip", "pulse", "swoop", "slide"];

/// RMS of a generated word over its duration.
pub const WORD_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub f_start: f64,
    pub f_end: f64,
    pub syllables: usize,
}

pub fn recipe(label: &str) -> Recipe {
    let (f_start, f_end, syllables) = match label {
        "rise" => (400.0, 900.0, 1),
        "fall" => (900.0, 400.0, 1),
        "drone" => (600.0, 600.0, 2),
        "lift" => (1200.0, 1800.0, 1),
        "dip" => (1800.0, 1200.0, 1),
        "pulse" => (300.0, 300.0, 3),
        "swoop" => (700.0, 1400.0, 2),
        "slide" => (1400.0, 700.0, 2),
        other => {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(other.as_bytes()));
            (rng.gen_range(250.0..2000.0), rng.gen_range(250.0..2000.0), rng.gen_range(1..=3))
        }
    };
    Recipe { f_start, f_end, syllables }
}

/// One utterance of `label`, 0.35 to 0.55 s long, with RMS [`WORD_RMS`].
pub fn surrogate_keyword(label: &str, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()));
    utterance(recipe(label), &mut rng)
}

fn utterance<R: Rng>(r: Recipe, rng: &mut R) -> Vec<f64> {
    let dur = rng.gen_range(0.35..0.55);
    let jitter = rng.gen_range(0.94..1.06);
    let partials = [1.0, rng.gen_range(0.4..0.6), rng.gen_range(0.15..0.35)];
    let n = (dur * SAMPLE_RATE as f64) as usize;
    let gap = (0.04 * SAMPLE_RATE as f64) as usize;
    let syl = (n - gap * (r.syllables - 1)) / r.syllables;
    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let frac = i as f64 / n as f64;
        let f0 = jitter * (r.f_start + (r.f_end - r.f_start) * frac);
        phase += 2.0 * PI * f0 / SAMPLE_RATE as f64;
        let pos = i % (syl + gap);
        if pos >= syl || i / (syl + gap) >= r.syllables {
            continue;
        }
        let env = 0.5 - 0.5 * (2.0 * PI * pos as f64 / syl as f64).cos();
        *o = env * partials.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum::<f64>();
    }
    normalize_rms(&mut out, WORD_RMS);
    out
}

/// Babble of random words (fresh pitch tracks, never a label's recipe) over
/// a white-noise floor 14 dB down, `len` samples long with RMS [`WORD_RMS`].
pub fn synth_playback(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut pos = rng.gen_range(0..SAMPLE_RATE / 10);
    while pos < len {
        let r = Recipe { f_start: rng.gen_range(250.0..2000.0), f_end: rng.gen_range(250.0..2000.0), syllables: rng.gen_range(1..=3) };
        let word = utterance(r, &mut rng);
        let amp = rng.gen_range(0.5..1.5);
        for (o, w) in out[pos..].iter_mut().zip(&word) {
            *o += amp * w;
        }
        pos += word.len() + rng.gen_range(SAMPLE_RATE / 50..SAMPLE_RATE * 3 / 20);
    }
    let normal = rand_distr::Normal::new(0.0, 0.2 * WORD_RMS).expect("finite");
    for o in out.iter_mut() {
        *o += rng.sample(normal);
    }
    normalize_rms(&mut out, WORD_RMS);
    out
}

pub(crate) fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}
