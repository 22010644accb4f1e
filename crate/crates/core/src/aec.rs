//! Multi-block frequency-domain echo canceller applied by overlap-save.
//!
//! Each step consumes `R = K/2` new playback and mixture samples. The echo
//! estimate is `y[k] = sum_b theta[k, b] u[k, tau - b]`, and the residual
//! block is the last `R` samples of the inverse transform of `d - y`, where
//! `d` is the spectrum of the last `K` mixture samples. No windowing is
//! applied.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::RealFft;
use crate::error::{config, usage, Result};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Window `K` and block count `B`; the hop is `K/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    pub window: usize,
    pub blocks: usize,
    /// Project filter gradients onto causal length-`R` responses.
    pub constrain_gradient: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { window: 1024, blocks: 4, constrain_gradient: false }
    }
}

impl FilterConfig {
    pub fn new(window: usize, blocks: usize) -> Self {
        Self { window, blocks, constrain_gradient: false }
    }

    pub fn hop(&self) -> usize {
        self.window / 2
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Longest echo path (in taps) the filter can represent exactly.
    pub fn max_taps(&self) -> usize {
        self.blocks * self.hop()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 4 || !self.window.is_power_of_two() {
            return Err(config!("filter window must be a power of two >= 4, got {}", self.window));
        }
        if self.blocks == 0 {
            return Err(config!("filter needs at least one block"));
        }
        Ok(())
    }
}

/// Streaming state of one filter instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Coefficients, block-major: `theta[b * bins + k]`.
    pub theta: Vec<C64>,
    /// Playback spectra, newest first: `input_spectra[b]` is frame `tau - b`.
    pub input_spectra: Vec<Vec<C64>>,
    /// Last `K` playback samples.
    pub playback: Vec<f64>,
    /// Last `K` mixture samples.
    pub mixture: Vec<f64>,
    pub frame_index: usize,
}

impl FilterState {
    pub fn new(cfg: &FilterConfig) -> Self {
        Self {
            theta: vec![ZERO; cfg.blocks * cfg.bins()],
            input_spectra: vec![vec![ZERO; cfg.bins()]; cfg.blocks],
            playback: vec![0.0; cfg.window],
            mixture: vec![0.0; cfg.window],
            frame_index: 0,
        }
    }

    pub fn theta_block(&self, b: usize) -> &[C64] {
        let bins = self.input_spectra[0].len();
        &self.theta[b * bins..(b + 1) * bins]
    }
}

/// Outputs of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub d_spec: Vec<C64>,
    pub y_spec: Vec<C64>,
    pub e_spec: Vec<C64>,
    /// `R` new residual samples.
    pub e_time: Vec<f64>,
    /// Filter gradient, block-major like `theta`.
    pub grad: Vec<C64>,
}

/// Shared transform plan and configuration.
#[derive(Debug, Clone)]
pub struct EchoCanceller {
    cfg: FilterConfig,
    fft: Arc<RealFft>,
}

impl EchoCanceller {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, fft: Arc::new(RealFft::new(cfg.window)?) })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn fft(&self) -> &Arc<RealFft> {
        &self.fft
    }

    pub fn new_state(&self) -> FilterState {
        FilterState::new(&self.cfg)
    }

    /// Shifts `R` new samples into the buffers and returns the mixture spectrum.
    ///
    /// After this call `state.input_spectra[0]` holds the current playback frame.
    pub fn advance(&self, state: &mut FilterState, u_block: &[f64], d_block: &[f64]) -> Result<Vec<C64>> {
        let r = self.cfg.hop();
        if u_block.len() != r || d_block.len() != r {
            return Err(usage!(
                "filter step needs {r} samples, got playback {} and mixture {}",
                u_block.len(),
                d_block.len()
            ));
        }
        shift_in(&mut state.playback, u_block);
        shift_in(&mut state.mixture, d_block);
        state.input_spectra.rotate_right(1);
        state.input_spectra[0] = self.fft.forward(&state.playback)?;
        state.frame_index += 1;
        self.fft.forward(&state.mixture)
    }

    /// Echo estimate from the current coefficients and buffered playback.
    pub fn echo_estimate(&self, state: &FilterState) -> Vec<C64> {
        let bins = self.cfg.bins();
        let mut y = vec![ZERO; bins];
        for (b, u) in state.input_spectra.iter().enumerate() {
            for ((yk, uk), th) in y.iter_mut().zip(u).zip(state.theta_block(b)) {
                *yk += th * uk;
            }
        }
        y
    }

    /// Last `R` samples of the inverse transform of `e_spec`.
    pub fn residual_block(&self, e_spec: &[C64]) -> Result<Vec<f64>> {
        let mut t = self.fft.inverse(e_spec)?;
        Ok(t.split_off(self.cfg.hop()))
    }

    /// One overlap-save step: filter, residual and filter gradient.
    pub fn filter_step(&self, state: &mut FilterState, u_block: &[f64], d_block: &[f64]) -> Result<StepOutput> {
        let d_spec = self.advance(state, u_block, d_block)?;
        let y_spec = self.echo_estimate(state);
        let e_spec: Vec<C64> = d_spec.iter().zip(&y_spec).map(|(d, y)| d - y).collect();
        let e_time = self.residual_block(&e_spec)?;
        let grad = self.filter_gradient(state, &e_spec)?;
        Ok(StepOutput { d_spec, y_spec, e_spec, e_time, grad })
    }

    /// `grad[k, b] = -conj(u[k, tau - b]) e[k]`, optionally constrained to a
    /// causal length-`R` time response per block.
    pub fn filter_gradient(&self, state: &FilterState, e_spec: &[C64]) -> Result<Vec<C64>> {
        let bins = self.cfg.bins();
        if e_spec.len() != bins {
            return Err(usage!("error spectrum has {} bins, expected {bins}", e_spec.len()));
        }
        let mut grad = Vec::with_capacity(self.cfg.blocks * bins);
        for u in &state.input_spectra {
            let mut g: Vec<C64> = u.iter().zip(e_spec).map(|(u, e)| -(u.conj() * e)).collect();
            if self.cfg.constrain_gradient {
                g = self.constrain(&g)?;
            }
            grad.extend(g);
        }
        Ok(grad)
    }

    /// Zeroes the second half of the block's time response.
    pub fn constrain(&self, spec: &[C64]) -> Result<Vec<C64>> {
        let mut t = self.fft.inverse(spec)?;
        t[self.cfg.hop()..].iter_mut().for_each(|v| *v = 0.0);
        self.fft.forward(&t)
    }

    /// `theta <- theta + delta`.
    pub fn apply_update(&self, state: &mut FilterState, delta: &[C64]) -> Result<()> {
        if delta.len() != state.theta.len() {
            return Err(usage!("update has {} entries, filter has {}", delta.len(), state.theta.len()));
        }
        for (t, d) in state.theta.iter_mut().zip(delta) {
            *t += d;
        }
        Ok(())
    }

    /// Coefficients that realize a time-domain response of at most `B * R` taps.
    pub fn theta_from_response(&self, w: &[f64]) -> Result<Vec<C64>> {
        let r = self.cfg.hop();
        if w.len() > self.cfg.max_taps() {
            return Err(usage!("response has {} taps, filter holds {}", w.len(), self.cfg.max_taps()));
        }
        let mut theta = Vec::with_capacity(self.cfg.blocks * self.cfg.bins());
        for b in 0..self.cfg.blocks {
            let mut block = vec![0.0; self.cfg.window];
            for (i, v) in block.iter_mut().take(r).enumerate() {
                if let Some(&x) = w.get(b * r + i) {
                    *v = x;
                }
            }
            theta.extend(self.fft.forward(&block)?);
        }
        Ok(theta)
    }
}

fn shift_in(buf: &mut [f64], block: &[f64]) {
    let n = block.len();
    buf.copy_within(n.., 0);
    let len = buf.len();
    buf[len - n..].copy_from_slice(block);
}

/// Splits a signal into hop-sized blocks, zero-padding the last one.
pub fn hop_blocks(x: &[f64], hop: usize) -> Vec<Vec<f64>> {
    x.chunks(hop)
        .map(|c| {
            let mut b = c.to_vec();
            b.resize(hop, 0.0);
            b
        })
        .collect()
}

/// Runs the filter over whole signals with a caller-supplied update rule and
/// returns the residual, trimmed to the input length.
pub fn run_with<F>(aec: &EchoCanceller, u: &[f64], d: &[f64], mut update: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut FilterState, &StepOutput) -> Result<()>,
{
    if u.len() != d.len() {
        return Err(usage!("playback and mixture lengths differ ({} vs {})", u.len(), d.len()));
    }
    let hop = aec.config().hop();
    let mut state = aec.new_state();
    let mut out = Vec::with_capacity(u.len() + hop);
    for (ub, db) in hop_blocks(u, hop).iter().zip(&hop_blocks(d, hop)) {
        let step = aec.filter_step(&mut state, ub, db)?;
        out.extend_from_slice(&step.e_time);
        update(&mut state, &step)?;
    }
    out.truncate(u.len());
    Ok(out)
}
