//! Learned per-frequency update rule.
//!
//! Bins are partitioned into overlapping groups (size 5, hop 2 by default).
//! For every group, the compressed feature stack of five signals across the
//! group's bins feeds a linear input projection and two complex gated
//! recurrent layers with split sigmoid/tanh activations. An output projection
//! produces one complex update per bin of the group; overlapping outputs are
//! averaged, and each filter block receives that update scaled by a learned
//! complex gain. All groups share weights; each keeps its own hidden state.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{CVar, Tape};
use crate::error::{config, usage, Error, Result};
use crate::params::{glorot, Dtype, Param, ParamSet, TapeParams};
use crate::C64;

/// Signals stacked per bin: gradient (block-averaged), playback, mixture, residual, echo estimate.
pub const N_SIGNALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizerConfig {
    pub group_size: usize,
    pub group_hop: usize,
    pub hidden: usize,
    /// Filter blocks `B`.
    pub blocks: usize,
    /// Frequency bins of the filter.
    pub bins: usize,
}

impl OptimizerConfig {
    /// Group size 5, hop 2, hidden 48 over a filter of `bins` bins and `blocks` blocks.
    pub fn new(bins: usize, blocks: usize) -> Self {
        Self { group_size: 5, group_hop: 2, hidden: 48, blocks, bins }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 || self.group_hop == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(config!("optimizer sizes must be positive: {self:?}"));
        }
        if self.bins < self.group_size {
            return Err(config!("{} bins cannot hold a group of {}", self.bins, self.group_size));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        N_SIGNALS * self.group_size
    }
}

/// Start bins of the frequency groups. The last group is clamped to end at
/// the final bin.
pub fn group_starts(bins: usize, size: usize, hop: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..).map(|g| g * hop).take_while(|s| s + size <= bins).collect();
    let last = bins - size;
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Per-group recurrent state: one `groups x hidden` complex matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<Vec<C64>>,
}

/// The five per-bin input signals for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// Filter gradient, block-major `blocks x bins`.
    pub grad: Vec<C64>,
    pub u: Vec<C64>,
    pub d: Vec<C64>,
    pub e: Vec<C64>,
    pub y: Vec<C64>,
    pub frame_index: usize,
}

/// Parameter indices within the set built by [`MetaOptimizer::init_params`].
mod idx {
    pub const IN_W: usize = 0;
    pub const IN_B: usize = 1;
    pub const GRU: usize = 2; // w, u, b per layer
    pub const OUT_W: usize = 8;
    pub const OUT_B: usize = 9;
    pub const GAIN: usize = 10;
}

const LAYERS: usize = 2;

#[derive(Debug, Clone)]
pub struct MetaOptimizer {
    cfg: OptimizerConfig,
    starts: Vec<usize>,
    gather: Arc<[usize]>,
    scatter: Arc<[usize]>,
    inv_counts: Vec<f64>,
}

impl MetaOptimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let starts = group_starts(cfg.bins, cfg.group_size, cfg.group_hop);
        let gs = cfg.group_size;
        let gather: Arc<[usize]> = starts
            .iter()
            .flat_map(|&s| (0..N_SIGNALS).flat_map(move |j| (0..gs).map(move |i| j * cfg.bins + s + i)))
            .collect();
        let scatter: Arc<[usize]> = starts.iter().flat_map(|&s| (0..gs).map(move |i| s + i)).collect();
        let mut counts = vec![0usize; cfg.bins];
        scatter.iter().for_each(|&b| counts[b] += 1);
        let inv_counts = counts.iter().map(|&c| 1.0 / c as f64).collect();
        Ok(Self { cfg, starts, gather, scatter, inv_counts })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn groups(&self) -> usize {
        self.starts.len()
    }

    pub fn group_starts(&self) -> &[usize] {
        &self.starts
    }

    /// Fresh parameters: Glorot-initialized weights, zero biases, unit block gains.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let h = self.cfg.hidden;
        let ni = self.cfg.inputs();
        let gs = self.cfg.group_size;
        let mut ps = ParamSet::new();
        let cplx = |name: &str, rows: usize, cols: usize, data: Vec<f64>| Param {
            name: name.into(),
            dtype: Dtype::Complex,
            rows,
            cols,
            data,
        };
        ps.push(cplx("in.w", ni, h, glorot(rng, Dtype::Complex, ni, h, ni * h)));
        ps.push(cplx("in.b", 1, h, vec![0.0; 2 * h]));
        for l in 0..LAYERS {
            ps.push(cplx(&format!("gru{l}.w"), h, 3 * h, glorot(rng, Dtype::Complex, h, 3 * h, 3 * h * h)));
            ps.push(cplx(&format!("gru{l}.u"), h, 3 * h, glorot(rng, Dtype::Complex, h, 3 * h, 3 * h * h)));
            ps.push(cplx(&format!("gru{l}.b"), 1, 3 * h, vec![0.0; 6 * h]));
        }
        ps.push(cplx("out.w", h, gs, glorot(rng, Dtype::Complex, h, gs, h * gs)));
        ps.push(cplx("out.b", 1, gs, vec![0.0; 2 * gs]));
        let b = self.cfg.blocks;
        let mut gain = vec![1.0; b];
        gain.extend(vec![0.0; b]);
        ps.push(cplx("block_gain", 1, b, gain));
        ps
    }

    /// Checks that `params` has this optimizer's layout.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.init_params(&mut rng).check_compatible(params)
    }

    pub fn zero_hidden(&self) -> HiddenState {
        HiddenState { layers: vec![vec![C64::new(0.0, 0.0); self.groups() * self.cfg.hidden]; LAYERS] }
    }

    pub fn hidden_on_tape(&self, tape: &mut Tape, hidden: &HiddenState) -> Vec<CVar> {
        hidden.layers.iter().map(|l| tape.cleaf(l, self.groups(), self.cfg.hidden)).collect()
    }

    pub fn hidden_from_tape(&self, tape: &Tape, hidden: &[CVar]) -> HiddenState {
        HiddenState { layers: hidden.iter().map(|&h| tape.cvalue(h)).collect() }
    }

    /// Network forward on already-compressed per-bin features
    /// (`N_SIGNALS` vectors of `bins`). Returns one update per filter block
    /// (each `1 x bins`) and the next hidden state.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &TapeParams,
        hidden: &[CVar],
        features: &[CVar; N_SIGNALS],
    ) -> (Vec<CVar>, Vec<CVar>) {
        let g = self.groups();
        let h = self.cfg.hidden;
        let stacked = tape.cconcat(features);
        let x = tape.cgather(stacked, self.gather.clone(), g, self.cfg.inputs());
        let proj = tape.cmatmul(x, p.complex(idx::IN_W));
        let mut layer_in = tape.cadd_row_vec(proj, p.complex(idx::IN_B));

        let mut next = Vec::with_capacity(LAYERS);
        for (l, &h_prev) in hidden.iter().enumerate() {
            let base = idx::GRU + 3 * l;
            let gx = tape.cmatmul(layer_in, p.complex(base));
            let gx = tape.cadd_row_vec(gx, p.complex(base + 2));
            let gh = tape.cmatmul(h_prev, p.complex(base + 1));
            let (xz, xr, xn) = (tape.cslice_cols(gx, 0, h), tape.cslice_cols(gx, h, 2 * h), tape.cslice_cols(gx, 2 * h, 3 * h));
            let (hz, hr, hn) = (tape.cslice_cols(gh, 0, h), tape.cslice_cols(gh, h, 2 * h), tape.cslice_cols(gh, 2 * h, 3 * h));
            let z = tape.cadd(xz, hz);
            let z = tape.csigmoid_split(z);
            let r = tape.cadd(xr, hr);
            let r = tape.csigmoid_split(r);
            let rh = tape.cmul(r, hn);
            let n = tape.cadd(xn, rh);
            let n = tape.ctanh_split(n);
            let keep = tape.cone_minus(z);
            let a = tape.cmul(keep, n);
            let b = tape.cmul(z, h_prev);
            let h_new = tape.cadd(a, b);
            next.push(h_new);
            layer_in = h_new;
        }

        let out = tape.cmatmul(layer_in, p.complex(idx::OUT_W));
        let out = tape.cadd_row_vec(out, p.complex(idx::OUT_B));
        let bins = self.cfg.bins;
        let summed = tape.cindex_add(out, self.scatter.clone(), 1, bins);
        let inv = tape.leaf(self.inv_counts.clone(), 1, bins);
        let per_bin = CVar { re: tape.mul(summed.re, inv), im: tape.mul(summed.im, inv) };
        let gains = p.complex(idx::GAIN);
        let deltas = (0..self.cfg.blocks)
            .map(|b| {
                let gb = tape.cslice(gains, b, b + 1);
                tape.cmul_scalar(per_bin, gb)
            })
            .collect();
        (deltas, next)
    }

    /// One inference step: `(delta, next hidden)` for the filter coefficients,
    /// block-major like `FilterState::theta`.
    pub fn optimizer_step(&self, params: &ParamSet, hidden: &HiddenState, xi: &FeatureStack) -> Result<(Vec<C64>, HiddenState)> {
        let bins = self.cfg.bins;
        let blocks = self.cfg.blocks;
        if xi.grad.len() != bins * blocks || [&xi.u, &xi.d, &xi.e, &xi.y].iter().any(|s| s.len() != bins) {
            return Err(usage!("feature stack does not match {bins} bins x {blocks} blocks"));
        }
        let all = xi.grad.iter().chain(&xi.u).chain(&xi.d).chain(&xi.e).chain(&xi.y);
        if all.clone().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite optimizer input at frame {}", xi.frame_index)));
        }
        let mut grad_avg = vec![C64::new(0.0, 0.0); bins];
        for blk in xi.grad.chunks(bins) {
            for (a, g) in grad_avg.iter_mut().zip(blk) {
                *a += g / blocks as f64;
            }
        }
        let mut tape = Tape::new();
        let p = params.register(&mut tape);
        let feats = [&grad_avg, &xi.u, &xi.d, &xi.e, &xi.y].map(|s| {
            let v = tape.cleaf(s, 1, bins);
            tape.ccompress(v)
        });
        let h = self.hidden_on_tape(&mut tape, hidden);
        let (deltas, next) = self.forward(&mut tape, &p, &h, &feats);
        let delta = deltas.iter().flat_map(|&d| tape.cvalue(d)).collect();
        Ok((delta, self.hidden_from_tape(&tape, &next)))
    }
}

/// `ln(1 + |z|) e^{i arg z}`.
pub fn compress_features(z: C64) -> C64 {
    z * crate::autodiff::compress_gain(z.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Dtype;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, bins: usize, blocks: usize) -> FeatureStack {
        let mut v = |n: usize| -> Vec<C64> { (0..n).map(|_| C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect() };
        FeatureStack { grad: v(bins * blocks), u: v(bins), d: v(bins), e: v(bins), y: v(bins), frame_index: 3 }
    }

    #[test]
    fn partition_of_sixteen_bins() {
        // Oracle: enumerate every start with hop 2 that fits, then clamp.
        let mut expected = Vec::new();
        let mut s = 0;
        while s + 5 <= 16 {
            expected.push(s);
            s += 2;
        }
        expected.push(16 - 5);
        assert_eq!(expected, vec![0, 2, 4, 6, 8, 10, 11]);
        assert_eq!(group_starts(16, 5, 2), expected);
        // Exactly fitting partitions add no clamped group.
        assert_eq!(group_starts(9, 5, 2), vec![0, 2, 4]);
        let covered: Vec<bool> = (0..33)
            .map(|b| group_starts(33, 5, 2).iter().any(|&s| (s..s + 5).contains(&b)))
            .collect();
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn parameter_budget_at_defaults() {
        let opt = MetaOptimizer::new(OptimizerConfig::new(513, 4)).unwrap();
        let ps = opt.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let n = ps.count(Dtype::Complex) as f64;
        assert_eq!(ps.count(Dtype::Real), 0);
        assert!((n - 32_000.0).abs() <= 0.15 * 32_000.0, "{n}");
    }

    #[test]
    fn zero_output_weights_freeze_filter() {
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: 8, ..OptimizerConfig::new(17, 2) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = opt.init_params(&mut rng);
        for name in ["out.w", "out.b"] {
            let i = ps.index_of(name).unwrap();
            ps.params_mut()[i].data.iter_mut().for_each(|v| *v = 0.0);
        }
        let xi = random_stack(&mut rng, 17, 2);
        let (delta, _) = opt.optimizer_step(&ps, &opt.zero_hidden(), &xi).unwrap();
        assert!(delta.iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: 8, ..OptimizerConfig::new(17, 2) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = opt.init_params(&mut rng);
        let xi = random_stack(&mut rng, 17, 2);
        let h = opt.zero_hidden();
        let a = opt.optimizer_step(&ps, &h, &xi).unwrap();
        let b = opt.optimizer_step(&ps, &h, &xi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interleaved_streams_match_isolated_runs() {
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: 8, ..OptimizerConfig::new(17, 2) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = opt.init_params(&mut rng);
        let xa: Vec<FeatureStack> = (0..4).map(|_| random_stack(&mut rng, 17, 2)).collect();
        let xb: Vec<FeatureStack> = (0..4).map(|_| random_stack(&mut rng, 17, 2)).collect();
        let run = |xs: &[FeatureStack]| {
            let mut h = opt.zero_hidden();
            xs.iter()
                .map(|x| {
                    let (d, n) = opt.optimizer_step(&ps, &h, x).unwrap();
                    h = n;
                    d
                })
                .collect::<Vec<_>>()
        };
        let (iso_a, iso_b) = (run(&xa), run(&xb));
        let (mut ha, mut hb) = (opt.zero_hidden(), opt.zero_hidden());
        for i in 0..4 {
            let (da, na) = opt.optimizer_step(&ps, &ha, &xa[i]).unwrap();
            let (db, nb) = opt.optimizer_step(&ps, &hb, &xb[i]).unwrap();
            ha = na;
            hb = nb;
            assert_eq!(da, iso_a[i]);
            assert_eq!(db, iso_b[i]);
        }
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: 4, ..OptimizerConfig::new(9, 1) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ps = opt.init_params(&mut rng);
        let mut xi = random_stack(&mut rng, 9, 1);
        xi.e[2] = C64::new(f64::NAN, 0.0);
        match opt.optimizer_step(&ps, &opt.zero_hidden(), &xi) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("frame 3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compression_properties() {
        assert_eq!(compress_features(C64::new(0.0, 0.0)), C64::new(0.0, 0.0));
        let z = C64::from_polar(core::f64::consts::E - 1.0, 0.7);
        let c = compress_features(z);
        assert!((c.norm() - 1.0).abs() < 1e-12);
        assert!((c.arg() - 0.7).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mags: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..100.0)).collect();
        mags.sort_by(f64::total_cmp);
        let out: Vec<f64> = mags.iter().map(|&m| compress_features(C64::from_polar(m, 1.3)).norm()).collect();
        for (w, m) in out.windows(2).zip(mags.windows(2)) {
            if m[1] > m[0] {
                assert!(w[1] > w[0]);
            }
        }
    }
}
