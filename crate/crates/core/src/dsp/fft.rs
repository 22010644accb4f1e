//! Radix-2 transforms for real blocks.
//!
//! Spectra of a length-`n` real block are stored as the `n/2 + 1`
//! non-redundant bins. The full spectrum is recovered by conjugate symmetry.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use core::f64::consts::PI;

use crate::error::{config, Result};
use crate::C64;

/// A planned transform for real blocks of one fixed power-of-two length.
#[derive(Debug, Clone)]
pub struct RealFft {
    n: usize,
    twiddles: Vec<C64>,
    bitrev: Vec<usize>,
}

impl RealFft {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(config!("transform size must be a power of two >= 2, got {n}"));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    /// Block length.
    pub fn len(&self) -> usize {
        self.n
    }

    /// Number of stored bins, `n/2 + 1`.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// In-place complex transform, `X_k = sum_n x_n e^{-2 pi i k n / N}`.
    pub fn fft_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, false);
    }

    /// In-place unnormalized inverse, `x_n = sum_k X_k e^{+2 pi i k n / N}`.
    pub fn ifft_unnormalized_in_place(&self, buf: &mut [C64]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [C64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let mut w = self.twiddles[j * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    /// Forward transform of a real block, returning `n/2 + 1` bins.
    pub fn forward(&self, block: &[f64]) -> Result<Vec<C64>> {
        if block.len() != self.n {
            return Err(config!(
                "block length {} does not match transform size {}",
                block.len(),
                self.n
            ));
        }
        let mut buf: Vec<C64> = block.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.fft_in_place(&mut buf);
        buf.truncate(self.bins());
        Ok(buf)
    }

    /// Inverse of [`RealFft::forward`]. The imaginary parts of the DC and
    /// Nyquist bins are ignored.
    pub fn inverse(&self, spectrum: &[C64]) -> Result<Vec<f64>> {
        if spectrum.len() != self.bins() {
            return Err(config!(
                "spectrum has {} bins, expected {}",
                spectrum.len(),
                self.bins()
            ));
        }
        let mut buf = self.hermitian_extend(spectrum);
        self.ifft_unnormalized_in_place(&mut buf);
        let scale = 1.0 / self.n as f64;
        Ok(buf.iter().map(|z| z.re * scale).collect())
    }

    fn hermitian_extend(&self, half: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut full = vec![C64::new(0.0, 0.0); n];
        full[0] = C64::new(half[0].re, 0.0);
        full[n / 2] = C64::new(half[n / 2].re, 0.0);
        for k in 1..n / 2 {
            full[k] = half[k];
            full[n - k] = half[k].conj();
        }
        full
    }

    /// Adjoint of [`RealFft::forward`]: maps bin adjoints `(dRe, dIm)` to
    /// sample adjoints.
    pub fn forward_adjoint(&self, grad_re: &[f64], grad_im: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for k in 0..self.bins() {
            buf[k] = C64::new(grad_re[k], grad_im[k]);
        }
        self.ifft_unnormalized_in_place(&mut buf);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o += z.re;
        }
    }

    /// Adjoint of [`RealFft::inverse`]: maps sample adjoints to bin adjoints
    /// `(dRe, dIm)`, accumulated into the output slices.
    pub fn inverse_adjoint(&self, grad: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        let n = self.n;
        let mut buf: Vec<C64> = grad.iter().map(|&g| C64::new(g, 0.0)).collect();
        self.fft_in_place(&mut buf);
        let inv_n = 1.0 / n as f64;
        for k in 0..self.bins() {
            let edge = k == 0 || k == n / 2;
            let c = if edge { inv_n } else { 2.0 * inv_n };
            out_re[k] += c * buf[k].re;
            if !edge {
                out_im[k] += c * buf[k].im;
            }
        }
    }
}

/// Power `|X_k|^2` of each bin.
pub fn power(spectrum: &[C64]) -> Vec<f64> {
    spectrum.iter().map(|z| z.norm_sqr()).collect()
}

/// Sum of squares.
pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(num / den)`.
pub fn db_ratio(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<C64> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        C64::from_polar(v, -2.0 * PI * (k * t % n) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn zero_block_gives_zero_spectrum() {
        let fft = RealFft::new(16).unwrap();
        assert!(fft.forward(&[0.0; 16]).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let fft = RealFft::new(32).unwrap();
        let mut x = [0.0; 32];
        x[0] = 1.0;
        for z in fft.forward(&x).unwrap() {
            assert_eq!(z, C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[8usize, 64, 1024] {
            let fft = RealFft::new(n).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = fft.forward(&x).unwrap();
            let slow = naive_dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let fft = RealFft::new(n).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = fft.forward(&x).unwrap();
            let back = fft.inverse(&spec).unwrap();
            let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err.sqrt() / energy(&x).sqrt() < 1e-10);

            // Full-spectrum energy from the half spectrum.
            let full: f64 = spec
                .iter()
                .enumerate()
                .map(|(k, z)| if k == 0 || k == n / 2 { z.norm_sqr() } else { 2.0 * z.norm_sqr() })
                .sum();
            let ex = energy(&x);
            assert!((ex - full / n as f64).abs() / ex < 1e-8);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fft = RealFft::new(16).unwrap();
        let a: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let fa = fft.forward(&a).unwrap();
        let fb = fft.forward(&b).unwrap();
        let fs = fft.forward(&sum).unwrap();
        for k in 0..fft.bins() {
            assert!((fs[k] - (fa[k] * 2.0 - fb[k] * 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(RealFft::new(12), Err(crate::Error::Config(_))));
        let fft = RealFft::new(8).unwrap();
        assert!(matches!(fft.forward(&[0.0; 7]), Err(crate::Error::Config(_))));
        assert!(fft.inverse(&[C64::new(0.0, 0.0); 4]).is_err());
    }
}
