//! Log-mel features for the keyword classifier.
//!
//! Periodic Hann window, HTK mel scale, triangular bands spanning 0 Hz to
//! Nyquist with unit peak, `ln(max(energy, floor))`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use core::f64::consts::PI;

use super::fft::RealFft;
use super::frame::frame_count;
use crate::error::Result;
use crate::C64;

pub const N_MELS: usize = 40;
pub const MEL_FFT: usize = 512;
pub const MEL_HOP: usize = 256;
pub const MEL_FLOOR: f64 = 1e-8;

/// One frame of log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub coeffs: [f64; N_MELS],
    pub frame_index: usize,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Log-mel feature extractor with a precomputed filterbank.
#[derive(Debug, Clone)]
pub struct LogMel {
    fft: RealFft,
    hop: usize,
    n_mels: usize,
    window: Vec<f64>,
    /// `n_mels x bins`, row-major.
    filters: Vec<f64>,
    centers: Vec<f64>,
}

impl LogMel {
    /// The keyword-spotting frontend: 512-point window, 256-point hop, 40 bands at 16 kHz.
    pub fn kws() -> Self {
        Self::new(MEL_FFT, MEL_HOP, N_MELS, 16_000.0).expect("static configuration is valid")
    }

    pub fn new(n_fft: usize, hop: usize, n_mels: usize, sample_rate: f64) -> Result<Self> {
        let fft = RealFft::new(n_fft)?;
        frame_count(0, n_fft, hop)?;
        let window = (0..n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos())
            .collect();

        let bins = fft.bins();
        let top = hz_to_mel(sample_rate / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut filters = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate / n_fft as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                filters[m * bins + k] = w;
            }
        }
        let centers = edges[1..=n_mels].to_vec();
        Ok(Self { fft, hop, n_mels, window, filters, centers })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    /// Band center frequencies in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers
    }

    pub fn frames(&self, len: usize) -> usize {
        frame_count(len, self.fft.len(), self.hop).expect("validated at construction")
    }

    fn frame_spectrum(&self, x: &[f64], t: usize) -> Vec<C64> {
        let n = self.fft.len();
        let start = t * self.hop;
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for (i, z) in buf.iter_mut().enumerate() {
            if let Some(&v) = x.get(start + i) {
                *z = C64::new(v * self.window[i], 0.0);
            }
        }
        self.fft.fft_in_place(&mut buf);
        buf.truncate(self.fft.bins());
        buf
    }

    fn band_energies(&self, spectrum: &[C64], out: &mut [f64]) {
        let bins = self.fft.bins();
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.filters[m * bins..(m + 1) * bins];
            *o = row.iter().zip(spectrum).map(|(w, z)| w * z.norm_sqr()).sum();
        }
    }

    /// Features as an `n_mels x frames` matrix (row-major, one row per band).
    pub fn features(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let frames = self.frames(x.len());
        let mut out = vec![0.0; self.n_mels * frames];
        let mut bands = vec![0.0; self.n_mels];
        for t in 0..frames {
            let spec = self.frame_spectrum(x, t);
            self.band_energies(&spec, &mut bands);
            for (m, &e) in bands.iter().enumerate() {
                out[m * frames + t] = e.max(MEL_FLOOR).ln();
            }
        }
        (out, frames)
    }

    /// Same values as [`LogMel::features`], one [`MelFrame`] per frame.
    pub fn mel_spectrogram(&self, x: &[f64]) -> Vec<MelFrame> {
        assert_eq!(self.n_mels, N_MELS, "MelFrame holds exactly {N_MELS} bands");
        let (feat, frames) = self.features(x);
        (0..frames)
            .map(|t| {
                let mut coeffs = [0.0; N_MELS];
                for (m, c) in coeffs.iter_mut().enumerate() {
                    *c = feat[m * frames + t];
                }
                MelFrame { coeffs, frame_index: t }
            })
            .collect()
    }

    /// Accumulates into `grad_x` the adjoint of [`LogMel::features`] at `x`
    /// given feature adjoints laid out like the forward output.
    pub fn features_adjoint(&self, x: &[f64], grad_feat: &[f64], grad_x: &mut [f64]) {
        let n = self.fft.len();
        let bins = self.fft.bins();
        let frames = self.frames(x.len());
        debug_assert_eq!(grad_feat.len(), self.n_mels * frames);
        let mut bands = vec![0.0; self.n_mels];
        let mut grad_power = vec![0.0; bins];
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for t in 0..frames {
            let spec = self.frame_spectrum(x, t);
            self.band_energies(&spec, &mut bands);
            grad_power.iter_mut().for_each(|g| *g = 0.0);
            for m in 0..self.n_mels {
                if bands[m] <= MEL_FLOOR {
                    continue;
                }
                let g = grad_feat[m * frames + t] / bands[m];
                let row = &self.filters[m * bins..(m + 1) * bins];
                for (gp, w) in grad_power.iter_mut().zip(row) {
                    *gp += g * w;
                }
            }
            // d|X_k|^2 / dx_n = 2 Re(conj(X_k) e^{-i w k n}) for the windowed frame.
            buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for k in 0..bins {
                buf[k] = spec[k].conj() * grad_power[k];
            }
            self.fft.fft_in_place(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                if let Some(g) = grad_x.get_mut(start + i) {
                    *g += 2.0 * buf[i].re * self.window[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn silence_hits_floor() {
        let mel = LogMel::kws();
        let frames = mel.mel_spectrogram(&[0.0; 4000]);
        assert_eq!(frames.len(), 4000usize.div_ceil(256));
        for f in &frames {
            assert!(f.coeffs.iter().all(|&c| c == MEL_FLOOR.ln()));
        }
    }

    #[test]
    fn empty_signal() {
        assert!(LogMel::kws().mel_spectrogram(&[]).is_empty());
    }

    #[test]
    fn doubling_amplitude_adds_two_ln_two() {
        let mel = LogMel::kws();
        let a = mel.features(&tone(700.0, 0.3, 3000)).0;
        let b = mel.features(&tone(700.0, 0.6, 3000)).0;
        for (x, y) in a.iter().zip(&b) {
            if *x > MEL_FLOOR.ln() + 1e-9 {
                assert!((y - x - 2.0 * 2f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tone_peaks_in_nearest_band() {
        let mel = LogMel::kws();
        // Oracle: band whose center is nearest 1 kHz, from the mel geometry alone.
        let top = hz_to_mel(8000.0);
        let nearest = (0..N_MELS)
            .min_by(|&a, &b| {
                let ca = mel_to_hz(top * (a + 1) as f64 / 41.0);
                let cb = mel_to_hz(top * (b + 1) as f64 / 41.0);
                (ca - 1000.0).abs().total_cmp(&(cb - 1000.0).abs())
            })
            .unwrap();
        let frames = mel.mel_spectrogram(&tone(1000.0, 1.0, 16_000));
        // Skip the zero-padded tail frames.
        for f in &frames[..frames.len() - 2] {
            let arg = (0..N_MELS)
                .max_by(|&a, &b| f.coeffs[a].total_cmp(&f.coeffs[b]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
