//! Signal primitives: framing, real-block transforms and log-mel features.

pub mod fft;
pub mod frame;
pub mod mel;

use alloc::vec::Vec;

pub use fft::{db_ratio, energy, RealFft};
pub use frame::{frame_count, frame_signal};
pub use mel::{LogMel, MelFrame, MEL_FLOOR, N_MELS};

use crate::error::{config, Result};
use crate::C64;

pub const SAMPLE_RATE: u32 = 16_000;

/// A finite-valued mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl RealSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(config!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(config!("non-finite sample at index {i}"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// One block's spectrum (non-redundant half).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFrame {
    pub bins: Vec<C64>,
    pub frame_index: usize,
}

/// Log-mel frames of a 16 kHz signal.
pub fn mel_spectrogram(x: &RealSignal) -> Result<Vec<MelFrame>> {
    if x.sample_rate() != SAMPLE_RATE {
        return Err(config!("expected {SAMPLE_RATE} Hz input, got {}", x.sample_rate()));
    }
    Ok(LogMel::kws().mel_spectrogram(x.samples()))
}
