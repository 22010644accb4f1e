//! The learned canceller: an overlap-save filter whose coefficients are
//! moved each frame by the meta-optimizer.
//!
//! The same recorded step serves training (many frames on one tape, then a
//! backward pass) and inference (one frame per tape, values only).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::aec::{hop_blocks, EchoCanceller, FilterState};
use crate::autodiff::{CVar, Tape, Var};
use crate::error::{usage, Error, Result};
use crate::optimizer::{HiddenState, MetaOptimizer, N_SIGNALS};
use crate::params::{ParamSet, TapeParams};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub filter: FilterState,
    pub hidden: HiddenState,
}

/// Tape handles of the state carried between frames of one window.
#[derive(Debug, Clone)]
pub struct TapeCarry {
    pub theta: Vec<CVar>,
    pub hidden: Vec<CVar>,
    spectra: Vec<CVar>,
}

#[derive(Debug, Clone)]
pub struct MetaAec {
    aec: EchoCanceller,
    opt: MetaOptimizer,
    mask: Vec<f64>,
}

impl MetaAec {
    pub fn new(aec: EchoCanceller, opt: MetaOptimizer) -> Result<Self> {
        let (f, o) = (aec.config(), opt.config());
        if f.bins() != o.bins || f.blocks != o.blocks {
            return Err(usage!(
                "optimizer shaped for {} bins x {} blocks, filter has {} x {}",
                o.bins, o.blocks, f.bins(), f.blocks
            ));
        }
        let mut mask = vec![0.0; f.window];
        mask[..f.hop()].iter_mut().for_each(|m| *m = 1.0);
        Ok(Self { aec, opt, mask })
    }

    pub fn aec(&self) -> &EchoCanceller {
        &self.aec
    }

    pub fn optimizer(&self) -> &MetaOptimizer {
        &self.opt
    }

    pub fn new_state(&self) -> MetaState {
        MetaState { filter: self.aec.new_state(), hidden: self.opt.zero_hidden() }
    }

    /// Enters the carried state on the tape as constants.
    pub fn begin(&self, tape: &mut Tape, state: &MetaState) -> TapeCarry {
        let bins = self.aec.config().bins();
        TapeCarry {
            theta: (0..self.aec.config().blocks).map(|b| tape.cleaf(state.filter.theta_block(b), 1, bins)).collect(),
            hidden: self.opt.hidden_on_tape(tape, &state.hidden),
            spectra: state.filter.input_spectra.iter().map(|u| tape.cleaf(u, 1, bins)).collect(),
        }
    }

    /// Copies the carried tape values back into `state`.
    pub fn end(&self, tape: &Tape, carry: &TapeCarry, state: &mut MetaState) {
        state.filter.theta = carry.theta.iter().flat_map(|&t| tape.cvalue(t)).collect();
        state.hidden = self.opt.hidden_from_tape(tape, &carry.hidden);
    }

    /// Records one filter step followed by one optimizer update and returns
    /// the `1 x R` residual node.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &TapeParams,
        carry: &mut TapeCarry,
        filter: &mut FilterState,
        u_block: &[f64],
        d_block: &[f64],
    ) -> Result<Var> {
        let cfg = self.aec.config();
        let (bins, hop, blocks) = (cfg.bins(), cfg.hop(), cfg.blocks);
        let fft = self.aec.fft();
        let d_spec = self.aec.advance(filter, u_block, d_block)?;
        carry.spectra.rotate_right(1);
        carry.spectra[0] = tape.cleaf(&filter.input_spectra[0], 1, bins);
        let d = tape.cleaf(&d_spec, 1, bins);

        let mut y = tape.cmul(carry.theta[0], carry.spectra[0]);
        for b in 1..blocks {
            let yb = tape.cmul(carry.theta[b], carry.spectra[b]);
            y = tape.cadd(y, yb);
        }
        let e = tape.csub(d, y);
        let full = tape.cirfft(e, fft);
        let e_time = tape.slice(full, hop, 2 * hop);

        let mut mean_u = vec![C64::new(0.0, 0.0); bins];
        for spec in &filter.input_spectra {
            for (m, u) in mean_u.iter_mut().zip(spec) {
                *m += u / blocks as f64;
            }
        }
        let mean_u = tape.cleaf(&mean_u, 1, bins);
        let g = tape.cmul_conj(mean_u, e);
        let mut grad = tape.cscale(g, -1.0);
        if cfg.constrain_gradient {
            let t = tape.cirfft(grad, fft);
            let m = tape.vector(self.mask.clone());
            let t = tape.mul(t, m);
            grad = tape.crfft(t, fft);
        }

        let raw: [CVar; N_SIGNALS] = [grad, carry.spectra[0], d, e, y];
        for z in raw {
            if tape.value(z.re).iter().chain(tape.value(z.im)).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite optimizer input at frame {}", filter.frame_index)));
            }
        }
        let feats = raw.map(|z| tape.ccompress(z));
        let (deltas, next) = self.opt.forward(tape, p, &carry.hidden, &feats);
        for (t, d) in carry.theta.iter_mut().zip(deltas) {
            *t = tape.cadd(*t, d);
        }
        carry.hidden = next;
        Ok(e_time)
    }

    /// Records a truncated window of steps; the carried state is a constant
    /// of this window and holds the end-of-window values on return.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        p: &TapeParams,
        state: &mut MetaState,
        u_blocks: &[Vec<f64>],
        d_blocks: &[Vec<f64>],
    ) -> Result<Vec<Var>> {
        if u_blocks.len() != d_blocks.len() {
            return Err(usage!("window has {} playback and {} mixture blocks", u_blocks.len(), d_blocks.len()));
        }
        let mut carry = self.begin(tape, state);
        let out = u_blocks
            .iter()
            .zip(d_blocks)
            .map(|(u, d)| self.step(tape, p, &mut carry, &mut state.filter, u, d))
            .collect::<Result<Vec<_>>>()?;
        self.end(tape, &carry, state);
        Ok(out)
    }

    /// Residual over whole signals, trimmed to the input length.
    pub fn process(&self, params: &ParamSet, u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if u.len() != d.len() {
            return Err(usage!("playback and mixture lengths differ ({} vs {})", u.len(), d.len()));
        }
        let hop = self.aec.config().hop();
        let mut state = self.new_state();
        let mut out = Vec::with_capacity(u.len() + hop);
        for (ub, db) in hop_blocks(u, hop).into_iter().zip(hop_blocks(d, hop)) {
            let mut tape = Tape::new();
            let p = params.register(&mut tape);
            let e = self.unroll(&mut tape, &p, &mut state, &[ub], &[db])?;
            out.extend_from_slice(tape.value(e[0]));
        }
        out.truncate(u.len());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aec::FilterConfig;
    use crate::autodiff::check_gradients;
    use crate::loss::meta_loss_on_tape;
    use crate::optimizer::{FeatureStack, OptimizerConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(k: usize, b: usize, h: usize) -> MetaAec {
        let aec = EchoCanceller::new(FilterConfig::new(k, b)).unwrap();
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: h, ..OptimizerConfig::new(k / 2 + 1, b) }).unwrap();
        MetaAec::new(aec, opt).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn tape_step_matches_plain_filter_and_optimizer() {
        let m = model(16, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = m.optimizer().init_params(&mut rng);
        let (u, d) = (noise(&mut rng, 80), noise(&mut rng, 80));
        let taped = m.process(&ps, &u, &d).unwrap();

        let aec = m.aec();
        let mut state = aec.new_state();
        let mut hidden = m.optimizer().zero_hidden();
        let mut plain = Vec::new();
        for (ub, db) in hop_blocks(&u, 8).iter().zip(&hop_blocks(&d, 8)) {
            let out = aec.filter_step(&mut state, ub, db).unwrap();
            plain.extend_from_slice(&out.e_time);
            let xi = FeatureStack {
                grad: out.grad.clone(),
                u: state.input_spectra[0].clone(),
                d: out.d_spec.clone(),
                e: out.e_spec.clone(),
                y: out.y_spec.clone(),
                frame_index: state.frame_index,
            };
            let (delta, next) = m.optimizer().optimizer_step(&ps, &hidden, &xi).unwrap();
            hidden = next;
            aec.apply_update(&mut state, &delta).unwrap();
        }
        for (a, b) in taped.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn two_step_unroll_gradients() {
        let m = model(16, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = m.optimizer().init_params(&mut rng);
        let u: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 8)).collect();
        let d: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 8)).collect();
        // Start from a warmed-up state so every input is nonzero.
        let mut start = m.new_state();
        start.filter.input_spectra[1] = m.aec().fft().forward(&noise(&mut rng, 16)).unwrap();
        start.filter.playback = noise(&mut rng, 16);
        start.filter.mixture = noise(&mut rng, 16);
        let report = check_gradients(
            |tape, vars| {
                let p = TapeParams::from_tensor_vars(&ps, vars);
                let mut st = start.clone();
                let e = m.unroll(tape, &p, &mut st, &u, &d).unwrap();
                let cat = tape.concat(&e);
                meta_loss_on_tape(tape, cat)
            },
            &ps.tensors(),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }

    #[test]
    fn window_equals_hand_unrolled_steps() {
        let m = model(16, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = m.optimizer().init_params(&mut rng);
        let u: Vec<Vec<f64>> = (0..4).map(|_| noise(&mut rng, 8)).collect();
        let d: Vec<Vec<f64>> = (0..4).map(|_| noise(&mut rng, 8)).collect();
        let grads = |hand: bool| {
            let mut tape = Tape::new();
            let p = ps.register(&mut tape);
            let mut st = m.new_state();
            let e = if hand {
                let mut carry = m.begin(&mut tape, &st);
                let mut out = Vec::new();
                for i in 0..4 {
                    out.push(m.step(&mut tape, &p, &mut carry, &mut st.filter, &u[i], &d[i]).unwrap());
                }
                out
            } else {
                m.unroll(&mut tape, &p, &mut st, &u, &d).unwrap()
            };
            let cat = tape.concat(&e);
            let l = meta_loss_on_tape(&mut tape, cat);
            p.flat_gradient(&tape.backward(l).unwrap())
        };
        assert_eq!(grads(true), grads(false));
    }

    #[test]
    fn window_boundary_detaches_state() {
        let m = model(16, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ps = m.optimizer().init_params(&mut rng);
        let mut st = m.new_state();
        let mut tape = Tape::new();
        let p = ps.register(&mut tape);
        m.unroll(&mut tape, &p, &mut st, &[noise(&mut rng, 8)], &[noise(&mut rng, 8)]).unwrap();
        // A second window on a fresh tape: the loss depends on the parameters
        // only through this window's own step.
        let mut tape2 = Tape::new();
        let p2 = ps.register(&mut tape2);
        let carry = m.begin(&mut tape2, &st);
        let theta_leaf = carry.theta[0];
        let mut st2 = st.clone();
        let e = m.unroll(&mut tape2, &p2, &mut st2, &[noise(&mut rng, 8)], &[noise(&mut rng, 8)]).unwrap();
        let l = meta_loss_on_tape(&mut tape2, e[0]);
        let g = tape2.backward(l).unwrap();
        // The unused carry created above is disconnected from the loss.
        assert!(g.get(theta_leaf.re).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nan_input_names_frame() {
        let m = model(16, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ps = m.optimizer().init_params(&mut rng);
        let mut u = noise(&mut rng, 40);
        u[20] = f64::NAN;
        let d = noise(&mut rng, 40);
        match m.process(&ps, &u, &d) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("frame 3"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let aec = EchoCanceller::new(FilterConfig::new(16, 2)).unwrap();
        let opt = MetaOptimizer::new(OptimizerConfig::new(17, 2)).unwrap();
        assert!(MetaAec::new(aec, opt).is_err());
    }
}
