//! Keyword classifier: log-mel frontend, three residual dilated-convolution
//! blocks, mean pooling over time and a softmax head.
//!
//! Each block maps the trunk through a 1x1 convolution, layer norm, ReLU,
//! a kernel-5 dilated convolution, layer norm, ReLU and a final 1x1
//! convolution back to the trunk width, then adds the block input.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::dsp::{LogMel, MelFrame, N_MELS};
use crate::error::{config, usage, Result};
use crate::params::{glorot, Dtype, Param, ParamSet, TapeParams};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KwsConfig {
    pub classes: usize,
    pub trunk: usize,
    /// Width inside each residual block.
    pub inner: usize,
    pub kernel: usize,
    pub dilations: [usize; 3],
}

impl KwsConfig {
    /// Full-size model (about 286K parameters at 35 classes).
    pub fn new(classes: usize) -> Self {
        Self { classes, trunk: 128, inner: 112, kernel: 5, dilations: [1, 2, 4] }
    }

    /// Narrow model for desk-scale experiments.
    pub fn toy(classes: usize) -> Self {
        Self { classes, trunk: 16, inner: 16, kernel: 5, dilations: [1, 2, 4] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.trunk == 0 || self.inner == 0 {
            return Err(config!("invalid classifier size {self:?}"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(config!("dilated kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl ClassPrediction {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mut predicted = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[predicted] {
                predicted = i;
            }
        }
        Self { probs, predicted }
    }
}

const PER_BLOCK: usize = 10;

#[derive(Debug, Clone)]
pub struct Kws {
    cfg: KwsConfig,
    mel: Arc<LogMel>,
}

impl Kws {
    pub fn new(cfg: KwsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, mel: Arc::new(LogMel::kws()) })
    }

    pub fn config(&self) -> &KwsConfig {
        &self.cfg
    }

    pub fn mel(&self) -> &Arc<LogMel> {
        &self.mel
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let KwsConfig { classes, trunk, inner, kernel, .. } = self.cfg;
        let mut ps = ParamSet::new();
        let dense = |ps: &mut ParamSet, name: &str, out: usize, fan_in: usize, rng: &mut R| {
            ps.push(Param::real(&format!("{name}.w"), out, fan_in, glorot(rng, Dtype::Real, fan_in, out, out * fan_in)));
            ps.push(Param::real(&format!("{name}.b"), out, 1, vec![0.0; out]));
        };
        dense(&mut ps, "in", trunk, N_MELS, rng);
        for i in 0..3 {
            dense(&mut ps, &format!("b{i}.c1"), inner, trunk, rng);
            ps.push(Param::real(&format!("b{i}.ln1.g"), inner, 1, vec![1.0; inner]));
            ps.push(Param::real(&format!("b{i}.ln1.b"), inner, 1, vec![0.0; inner]));
            dense(&mut ps, &format!("b{i}.dc"), inner, inner * kernel, rng);
            ps.push(Param::real(&format!("b{i}.ln2.g"), inner, 1, vec![1.0; inner]));
            ps.push(Param::real(&format!("b{i}.ln2.b"), inner, 1, vec![0.0; inner]));
            dense(&mut ps, &format!("b{i}.c2"), trunk, inner, rng);
        }
        dense(&mut ps, "out", classes, trunk, rng);
        ps
    }

    /// Checks that `params` has this model's layout.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.init_params(&mut rng).check_compatible(params)
    }

    /// Class probabilities (`classes x 1`) from an `n_mels x frames` feature node.
    pub fn forward_features(&self, tape: &mut Tape, p: &TapeParams, feats: Var) -> Result<Var> {
        let (bands, frames) = tape.shape(feats);
        if frames == 0 {
            return Err(usage!("classifier needs at least one frame"));
        }
        if bands != N_MELS {
            return Err(usage!("classifier expects {N_MELS} bands, got {bands}"));
        }
        let dense = |tape: &mut Tape, w: usize, x: Var| {
            let y = tape.matmul(p.real(w), x);
            tape.add_col_vec(y, p.real(w + 1))
        };
        let norm = |tape: &mut Tape, g: usize, x: Var| {
            let n = tape.layer_norm_cols(x, LN_EPS);
            let n = tape.mul_col_vec(n, p.real(g));
            let n = tape.add_col_vec(n, p.real(g + 1));
            tape.relu(n)
        };
        let mut h = dense(tape, 0, feats);
        for (i, &dil) in self.cfg.dilations.iter().enumerate() {
            let base = 2 + i * PER_BLOCK;
            let z = dense(tape, base, h);
            let z = norm(tape, base + 2, z);
            let z = tape.conv1d(z, p.real(base + 4), self.cfg.kernel, dil);
            let z = tape.add_col_vec(z, p.real(base + 5));
            let z = norm(tape, base + 6, z);
            let z = dense(tape, base + 8, z);
            h = tape.add(h, z);
        }
        let pooled = tape.mean_cols(h);
        let logits = dense(tape, 2 + 3 * PER_BLOCK, pooled);
        Ok(tape.softmax(logits))
    }

    /// Class probabilities from a waveform node.
    pub fn forward_signal(&self, tape: &mut Tape, p: &TapeParams, x: Var) -> Result<Var> {
        let feats = tape.log_mel(x, &self.mel);
        self.forward_features(tape, p, feats)
    }

    pub fn predict(&self, params: &ParamSet, x: &[f64]) -> Result<ClassPrediction> {
        let mut tape = Tape::new();
        let p = params.register(&mut tape);
        let xv = tape.vector(x.to_vec());
        let probs = self.forward_signal(&mut tape, &p, xv)?;
        Ok(ClassPrediction::from_probs(tape.value(probs).to_vec()))
    }

    pub fn predict_frames(&self, params: &ParamSet, frames: &[MelFrame]) -> Result<ClassPrediction> {
        let n = frames.len();
        let mut feats = vec![0.0; N_MELS * n];
        for (t, f) in frames.iter().enumerate() {
            for (m, &c) in f.coeffs.iter().enumerate() {
                feats[m * n + t] = c;
            }
        }
        let mut tape = Tape::new();
        let p = params.register(&mut tape);
        let fv = tape.leaf(feats, N_MELS, n);
        let probs = self.forward_features(&mut tape, &p, fv)?;
        Ok(ClassPrediction::from_probs(tape.value(probs).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::loss::kws_loss_on_tape;
    use crate::params::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent forward with explicit loops over channels and time.
    fn naive_forward(cfg: &KwsConfig, ps: &ParamSet, feats: &[f64], frames: usize) -> Vec<f64> {
        let get = |n: &str| &ps.get(n).unwrap().data;
        let conv1x1 = |w: &[f64], b: &[f64], x: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let cin = x.len();
            (0..b.len())
                .map(|o| (0..frames).map(|t| b[o] + (0..cin).map(|c| w[o * cin + c] * x[c][t]).sum::<f64>()).collect())
                .collect()
        };
        let ln_relu = |x: &mut Vec<Vec<f64>>, g: &[f64], b: &[f64]| {
            let c = x.len() as f64;
            for t in 0..frames {
                let mean = x.iter().map(|r| r[t]).sum::<f64>() / c;
                let var = x.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / c;
                for (i, r) in x.iter_mut().enumerate() {
                    r[t] = ((r[t] - mean) / (var + LN_EPS).sqrt() * g[i] + b[i]).max(0.0);
                }
            }
        };
        let x: Vec<Vec<f64>> = (0..N_MELS).map(|m| feats[m * frames..(m + 1) * frames].to_vec()).collect();
        let mut h = conv1x1(get("in.w"), get("in.b"), &x);
        for (i, &dil) in cfg.dilations.iter().enumerate() {
            let n = |s: &str| format!("b{i}.{s}");
            let mut z = conv1x1(get(&n("c1.w")), get(&n("c1.b")), &h);
            ln_relu(&mut z, get(&n("ln1.g")), get(&n("ln1.b")));
            let w = get(&n("dc.w"));
            let b = get(&n("dc.b"));
            let k = cfg.kernel;
            let mut c: Vec<Vec<f64>> = (0..cfg.inner).map(|o| vec![b[o]; frames]).collect();
            for (o, row) in c.iter_mut().enumerate() {
                for (t, out) in row.iter_mut().enumerate() {
                    for ci in 0..cfg.inner {
                        for j in 0..k {
                            let src = t as isize + (j as isize - (k / 2) as isize) * dil as isize;
                            if src >= 0 && (src as usize) < frames {
                                *out += w[o * cfg.inner * k + ci * k + j] * z[ci][src as usize];
                            }
                        }
                    }
                }
            }
            ln_relu(&mut c, get(&n("ln2.g")), get(&n("ln2.b")));
            let z = conv1x1(get(&n("c2.w")), get(&n("c2.b")), &c);
            for (hr, zr) in h.iter_mut().zip(&z) {
                for (a, b) in hr.iter_mut().zip(zr) {
                    *a += b;
                }
            }
        }
        let pooled: Vec<f64> = h.iter().map(|r| r.iter().sum::<f64>() / frames as f64).collect();
        let w = get("out.w");
        let b = get("out.b");
        let logits: Vec<f64> = (0..cfg.classes)
            .map(|o| b[o] + (0..cfg.trunk).map(|c| w[o * cfg.trunk + c] * pooled[c]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn randomize(ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for p in ps.params_mut() {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }

    #[test]
    fn matches_naive_forward() {
        let cfg = KwsConfig { inner: 6, trunk: 5, ..KwsConfig::toy(3) };
        let kws = Kws::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = kws.init_params(&mut rng);
        randomize(&mut ps, &mut rng);
        let frames = 11;
        let feats: Vec<f64> = (0..N_MELS * frames).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let p = ps.register(&mut tape);
        let f = tape.leaf(feats.clone(), N_MELS, frames);
        let probs = kws.forward_features(&mut tape, &p, f).unwrap();
        let oracle = naive_forward(&cfg, &ps, &feats, frames);
        for (a, b) in tape.value(probs).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn outputs_lie_on_simplex() {
        let kws = Kws::new(KwsConfig::toy(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = kws.init_params(&mut rng);
        let x: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pred = kws.predict(&ps, &x).unwrap();
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pred.probs.iter().all(|&p| p >= 0.0));
        assert!(kws.predict(&ps, &[]).is_err());
    }

    #[test]
    fn constant_input_is_length_invariant() {
        let kws = Kws::new(KwsConfig::toy(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = kws.init_params(&mut rng);
        // Center taps only: every frame is processed independently, so
        // padding cannot distinguish edge frames from interior ones.
        let k = kws.config().kernel;
        for i in 0..3 {
            let idx = ps.index_of(&format!("b{i}.dc.w")).unwrap();
            for (j, v) in ps.params_mut()[idx].data.iter_mut().enumerate() {
                if j % k != k / 2 {
                    *v = 0.0;
                }
            }
        }
        let frame = MelFrame { coeffs: core::array::from_fn(|i| (i as f64 * 0.3).sin()), frame_index: 0 };
        let a = kws.predict_frames(&ps, std::slice::from_ref(&frame)).unwrap();
        let b = kws.predict_frames(&ps, &vec![frame; 9]).unwrap();
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(ClassPrediction::from_probs(vec![0.25, 0.5, 0.25]).predicted, 1);
        assert_eq!(ClassPrediction::from_probs(vec![0.5, 0.5]).predicted, 0);
    }

    #[test]
    fn softmax_shift_invariance() {
        let kws = Kws::new(KwsConfig::toy(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = kws.init_params(&mut rng);
        let x: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = kws.predict(&ps, &x).unwrap();
        let i = ps.index_of("out.b").unwrap();
        ps.params_mut()[i].data.iter_mut().for_each(|v| *v += 7.5);
        let b = kws.predict(&ps, &x).unwrap();
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn parameter_budget_at_defaults() {
        let kws = Kws::new(KwsConfig::new(35)).unwrap();
        let n = kws.init_params(&mut ChaCha8Rng::seed_from_u64(0)).count(Dtype::Real) as f64;
        assert!((n - 300_000.0).abs() <= 0.15 * 300_000.0, "{n}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let cfg = KwsConfig { trunk: 8, inner: 8, ..KwsConfig::toy(3) };
        let kws = Kws::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ps = kws.init_params(&mut rng);
        let frames = 10;
        let feats: Vec<f64> = (0..N_MELS * frames).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tensors: Vec<Tensor> = ps.params().iter().map(|p| Tensor::new(p.rows, p.cols, p.data.clone())).collect();
        let report = check_gradients(
            |tape, vars| {
                let p = TapeParams::from_vars(vars);
                let f = tape.leaf(feats.clone(), N_MELS, frames);
                let probs = kws.forward_features(tape, &p, f).unwrap();
                kws_loss_on_tape(tape, probs, 1).unwrap()
            },
            &tensors,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }
}
