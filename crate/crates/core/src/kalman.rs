//! Diagonalized frequency-domain Kalman echo canceller.
//!
//! Each bin and block carries an independent scalar state with variance
//! `P[k, b]`. The observation noise `psi[k]` is tracked by exponential
//! smoothing of the a-priori error power. The innovation is the spectrum of
//! the zero-padded time-domain residual, so only the valid overlap-save
//! samples drive the update.

use alloc::vec;
use alloc::vec::Vec;

use crate::aec::{hop_blocks, EchoCanceller, FilterState};
use crate::error::{usage, Result};
use crate::C64;

const VAR_MIN: f64 = 1e-10;
const VAR_MAX: f64 = 1e10;
/// Gain denominator regularizer.
const GAIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// Transition factor `A` in `(0, 1]`.
    pub transition: f64,
    /// Process-noise scale `q`, relative to `|w|^2`.
    pub process_noise: f64,
    /// Smoothing factor for the observation-noise estimate.
    pub smoothing: f64,
    /// Initial state variance.
    pub initial_variance: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { transition: 0.999, process_noise: 1e-3, smoothing: 0.9, initial_variance: 1.0 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transition > 0.0 && self.transition <= 1.0) {
            return Err(usage!("transition factor must lie in (0, 1], got {}", self.transition));
        }
        if self.process_noise < 0.0 || !(0.0..1.0).contains(&self.smoothing) {
            return Err(usage!("invalid Kalman noise settings {:?}", self));
        }
        Ok(())
    }
}

/// The default tuning grid, in lexicographic `(A, q, smoothing)` order.
pub fn default_grid() -> Vec<KalmanConfig> {
    let mut grid = Vec::new();
    for &a in &[0.95, 0.99, 0.999] {
        for &q in &[1e-4, 1e-3, 1e-2] {
            for &s in &[0.9, 0.99] {
                grid.push(KalmanConfig {
                    transition: a,
                    process_noise: q,
                    smoothing: s,
                    ..KalmanConfig::default()
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// Buffers plus the current estimate (`filter.theta` is `w_hat`).
    pub filter: FilterState,
    /// State error variances, block-major like `theta`.
    pub p: Vec<f64>,
    /// Observation-noise variance per bin.
    pub psi_obs: Vec<f64>,
}

/// Diagonal Kalman canceller sharing the overlap-save machinery of [`EchoCanceller`].
#[derive(Debug, Clone)]
pub struct DiagKalman {
    aec: EchoCanceller,
    cfg: KalmanConfig,
}

impl DiagKalman {
    pub fn new(aec: EchoCanceller, cfg: KalmanConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { aec, cfg })
    }

    pub fn config(&self) -> &KalmanConfig {
        &self.cfg
    }

    pub fn new_state(&self) -> KalmanState {
        let filter = self.aec.new_state();
        let n = filter.theta.len();
        KalmanState {
            filter,
            p: vec![self.cfg.initial_variance; n],
            psi_obs: vec![VAR_MIN; self.aec.config().bins()],
        }
    }

    /// Predict, innovate and update on `R` new samples; returns `(e_spec, e_time)`.
    pub fn kf_step(&self, state: &mut KalmanState, u_block: &[f64], d_block: &[f64]) -> Result<(Vec<C64>, Vec<f64>)> {
        let d_spec = self.aec.advance(&mut state.filter, u_block, d_block)?;
        let e_spec = self.update(state, &d_spec);
        let e_time = self.aec.residual_block(&e_spec)?;
        Ok((e_spec, e_time))
    }

    /// Kalman recursion given buffered playback spectra and the mixture spectrum.
    pub fn update(&self, state: &mut KalmanState, d_spec: &[C64]) -> Vec<C64> {
        let bins = d_spec.len();
        let blocks = state.filter.input_spectra.len();
        let a = self.cfg.transition;
        let KalmanState { filter, p, psi_obs } = state;

        for (w, pv) in filter.theta.iter_mut().zip(p.iter_mut()) {
            *w *= a;
            *pv = (a * a * *pv + self.cfg.process_noise * w.norm_sqr()).clamp(VAR_MIN, VAR_MAX);
        }

        let y = self.aec.echo_estimate(filter);
        let raw: Vec<C64> = d_spec.iter().zip(&y).map(|(d, y)| d - y).collect();
        let e_time = self.aec.residual_block(&raw).expect("bins match");
        let mut padded = vec![0.0; self.aec.config().window];
        padded[self.aec.config().hop()..].copy_from_slice(&e_time);
        let e_pad = self.aec.fft().forward(&padded).expect("window matches");
        let mut e_spec = Vec::with_capacity(bins);
        for k in 0..bins {
            let mut denom = psi_obs[k] + GAIN_EPS;
            for b in 0..blocks {
                let u = filter.input_spectra[b][k];
                denom += u.norm_sqr() * p[b * bins + k];
            }
            let e = e_pad[k];
            for b in 0..blocks {
                let i = b * bins + k;
                let u = filter.input_spectra[b][k];
                let gain = u.conj() * (p[i] / denom);
                filter.theta[i] += gain * e;
                let shrink = 1.0 - p[i] * u.norm_sqr() / denom;
                p[i] = (shrink * p[i]).clamp(VAR_MIN, VAR_MAX);
            }
            let s = self.cfg.smoothing;
            psi_obs[k] = (s * psi_obs[k] + (1.0 - s) * e.norm_sqr()).clamp(VAR_MIN, VAR_MAX);
            e_spec.push(e);
        }
        e_spec
    }

    /// Residual over whole signals.
    pub fn process(&self, u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if u.len() != d.len() {
            return Err(usage!("playback and mixture lengths differ ({} vs {})", u.len(), d.len()));
        }
        let hop = self.aec.config().hop();
        let mut state = self.new_state();
        let mut out = Vec::with_capacity(u.len() + hop);
        for (ub, db) in hop_blocks(u, hop).iter().zip(&hop_blocks(d, hop)) {
            out.extend(self.kf_step(&mut state, ub, db)?.1);
        }
        out.truncate(u.len());
        Ok(out)
    }
}

/// Score of one grid point: macro F1 first, ERLE as tie-breaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScore {
    pub macro_f1: f64,
    pub erle_db: f64,
}

/// Returns the index of the best grid point. Ties on F1 go to the higher
/// ERLE, then to the earlier grid point.
pub fn select_best<F>(grid: &[KalmanConfig], mut score: F) -> Result<(usize, Vec<GridScore>)>
where
    F: FnMut(&KalmanConfig) -> Result<GridScore>,
{
    if grid.is_empty() {
        return Err(usage!("Kalman tuning grid is empty"));
    }
    let scores = grid.iter().map(&mut score).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        if s.macro_f1 > b.macro_f1 || (s.macro_f1 == b.macro_f1 && s.erle_db > b.erle_db) {
            best = i;
        }
    }
    Ok((best, scores))
}
