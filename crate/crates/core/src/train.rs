//! Training loops: classifier pretraining, optimizer meta-training against a
//! frozen classifier, and joint training of both.
//!
//! Canceller training runs each batch of scenes in lockstep through
//! truncated windows of random length. Every window contributes
//! `(1 - lambda)` times its meta-loss and takes one Adam step; the final
//! window also adds `lambda` times the classification loss of the whole
//! residual, whose earlier samples enter as constants.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, Plateau};
use crate::aec::hop_blocks;
use crate::autodiff::Tape;
use crate::error::{usage, Error, Result};
use crate::eval::{evaluate, Canceller};
use crate::exec::Executor;
use crate::kws::Kws;
use crate::loss::{check_lambda, kws_loss_on_tape, meta_loss_on_tape};
use crate::meta::{MetaAec, MetaState};
use crate::metrics::ConfusionMatrix;
use crate::params::ParamSet;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the classification loss.
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the classifier group in joint training.
    pub kws_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub max_epochs: usize,
    /// Inclusive range of truncation window lengths, in frames.
    pub window: (usize, usize),
    pub seed: u64,
}

impl TrainConfig {
    pub fn kws(seed: u64) -> Self {
        Self {
            lambda: 1.0,
            batch_size: 128,
            lr: 1e-3,
            kws_lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
            lr_patience: 10,
            stop_patience: 50,
            max_epochs: 50,
            window: (8, 32),
            seed,
        }
    }

    pub fn meta(lambda: f64, seed: u64) -> Self {
        Self {
            lambda,
            batch_size: 16,
            lr: 2e-4,
            beta1: 0.99,
            stop_patience: 30,
            max_epochs: 200,
            ..Self::kws(seed)
        }
    }

    pub fn joint(lambda: f64, seed: u64) -> Self {
        Self { lr: 1e-4, kws_lr: 1e-4, beta1: 0.9, stop_patience: 50, ..Self::meta(lambda, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(usage!("batch size and epoch limit must be positive"));
        }
        if self.window.0 == 0 || self.window.0 > self.window.1 {
            return Err(usage!("empty truncation range {:?}", self.window));
        }
        if !(self.lr >= 0.0 && self.kws_lr >= 0.0 && self.clip_norm > 0.0) {
            return Err(usage!("learning rates must be non-negative and the clip norm positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub macro_f1: Option<f64>,
    pub erle_db: Option<f64>,
    pub lr: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    /// Parameter groups: `[classifier]`, `[optimizer]` or `[optimizer, classifier]`.
    pub params: Vec<ParamSet>,
    pub adam: Vec<Adam>,
    pub lrs: Vec<f64>,
    pub plateau: Plateau,
    pub best: Vec<ParamSet>,
    pub best_epoch: usize,
    pub stopped: bool,
}

impl TrainState {
    fn fresh(params: Vec<ParamSet>, lrs: Vec<f64>, cfg: &TrainConfig, higher_is_better: bool) -> Self {
        let adam = params.iter().map(|p| Adam::new(p.flat_len(), cfg.beta1, cfg.beta2, cfg.eps)).collect();
        Self {
            epoch: 0,
            best: params.clone(),
            params,
            adam,
            lrs,
            plateau: Plateau::new(cfg.lr_patience, cfg.stop_patience, higher_is_better),
            best_epoch: 0,
            stopped: false,
        }
    }

    pub fn best_score(&self) -> Option<f64> {
        self.plateau.best
    }

    fn end_epoch(&mut self, score: f64) {
        let out = self.plateau.observe(score);
        self.epoch += 1;
        if out.improved {
            self.best = self.params.clone();
            self.best_epoch = self.epoch;
        }
        if out.halve_lr {
            self.lrs.iter_mut().for_each(|lr| *lr *= 0.5);
        }
        self.stopped = out.stop;
    }
}

/// Generator for one epoch, derived from the run seed so a resumed run
/// replays the same shuffles.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Applies one Adam step per group with present gradients after clipping
/// their concatenation to `clip`.
fn apply_step(state: &mut TrainState, grads: &mut [Option<Vec<f64>>], clip: f64) -> Result<()> {
    let total: f64 = grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum();
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let norm = total.sqrt();
    if norm > clip {
        let s = clip / norm;
        grads.iter_mut().flatten().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let mut flat = state.params[i].flat();
            state.adam[i].step(&mut flat, g, state.lrs[i])?;
            state.params[i].set_flat(&flat)?;
        }
    }
    Ok(())
}

fn mean_of(vectors: impl Iterator<Item = Vec<f64>>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vectors {
        n += 1;
        match acc.as_mut() {
            None => acc = Some(v),
            Some(a) => a.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
        }
    }
    acc.map(|mut a| {
        a.iter_mut().for_each(|x| *x /= n as f64);
        a
    })
}

pub struct TrainOutcome {
    pub best: Vec<ParamSet>,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub last: TrainState,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    fn from_state(last: TrainState, history: Vec<EpochRecord>) -> Self {
        Self { best: last.best.clone(), best_epoch: last.best_epoch, best_score: last.best_score(), last, history }
    }
}

/// A playback-free classifier example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub class: usize,
}

/// Classifier pretraining; the validation score is the mean loss.
pub fn train_kws<E: Executor>(
    kws: &Kws,
    init: ParamSet,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    exec: &E,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(usage!("classifier training needs nonempty train and validation sets"));
    }
    kws.check_params(&init)?;
    let classes = kws.config().classes;
    if let Some(e) = train.iter().chain(val).find(|e| e.class >= classes) {
        return Err(usage!("example class {} outside {classes} classes", e.class));
    }
    let features = |set: &[Example]| exec.map(set.len(), |i| kws.mel().features(&set[i].x));
    let (train_f, val_f) = (features(train), features(val));
    let sample = |params: &ParamSet, f: &(Vec<f64>, usize), class: usize, grad: bool| -> Result<(f64, usize, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = params.register(&mut tape);
        let x = tape.leaf(f.0.clone(), kws.mel().n_mels(), f.1);
        let probs = kws.forward_features(&mut tape, &p, x)?;
        let loss = kws_loss_on_tape(&mut tape, probs, class)?;
        let pred = crate::kws::ClassPrediction::from_probs(tape.value(probs).to_vec()).predicted;
        let g = if grad { p.flat_gradient(&tape.backward(loss)?) } else { Vec::new() };
        Ok((tape.scalar(loss), pred, g))
    };

    let mut st = resume.unwrap_or_else(|| TrainState::fresh(vec![init], vec![cfg.lr], cfg, false));
    let mut history = Vec::new();
    while st.epoch < cfg.max_epochs && !st.stopped {
        let mut rng = epoch_rng(cfg.seed, st.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let params = &st.params[0];
            let out = exec.map(batch.len(), |i| sample(params, &train_f[batch[i]], train[batch[i]].class, true));
            let out = out.into_iter().collect::<Result<Vec<_>>>()?;
            train_loss += out.iter().map(|o| o.0).sum::<f64>();
            let mut grads = [mean_of(out.into_iter().map(|o| o.2))];
            apply_step(&mut st, &mut grads, cfg.clip_norm)?;
        }
        let params = &st.params[0];
        let out = exec.map(val.len(), |i| sample(params, &val_f[i], val[i].class, false));
        let out = out.into_iter().collect::<Result<Vec<_>>>()?;
        let mut cm = ConfusionMatrix::new(classes);
        for (o, e) in out.iter().zip(val) {
            cm.add(e.class, o.1)?;
        }
        let val_loss = out.iter().map(|o| o.0).sum::<f64>() / val.len() as f64;
        let lr = st.lrs[0];
        let epoch = st.epoch;
        let records = [
            EpochRecord { epoch, split: Split::Train, loss: train_loss / train.len() as f64, macro_f1: None, erle_db: None, lr },
            EpochRecord { epoch, split: Split::Val, loss: val_loss, macro_f1: Some(cm.f1_scores()?.0), erle_db: None, lr },
        ];
        if !val_loss.is_finite() {
            return Err(Error::Numeric(alloc::format!("classifier validation loss diverged at epoch {epoch}")));
        }
        st.end_epoch(val_loss);
        for r in records {
            log(&r);
            history.push(r);
        }
    }
    Ok(TrainOutcome::from_state(st, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The classifier is a fixed part of the loss.
    Frozen,
    /// Optimizer and classifier are both updated.
    Joint,
}

pub struct CancellerTrainer<'a> {
    pub model: &'a MetaAec,
    pub kws: &'a Kws,
    pub mode: Mode,
    pub cfg: TrainConfig,
    /// Samples skipped by the ERLE of validation reports.
    pub warmup: usize,
}

struct WindowOut {
    loss: f64,
    grad_opt: Vec<f64>,
    grad_kws: Option<Vec<f64>>,
    state: MetaState,
    residual: Vec<f64>,
}

struct Prepared<'s> {
    scene: &'s Scene,
    u: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl CancellerTrainer<'_> {
    fn window(
        &self,
        opt: &ParamSet,
        kws_params: &ParamSet,
        sc: &Prepared<'_>,
        state: &MetaState,
        prefix: &[f64],
        range: Range<usize>,
        last: bool,
    ) -> Result<WindowOut> {
        let lambda = self.cfg.lambda;
        let mut tape = Tape::new();
        let p = opt.register(&mut tape);
        let mut st = state.clone();
        let e = self
            .model
            .unroll(&mut tape, &p, &mut st, &sc.u[range.clone()], &sc.d[range])
            .map_err(|e| e.in_stream(&sc.scene.id))?;
        let cat = tape.concat(&e);
        let lm = meta_loss_on_tape(&mut tape, cat);
        let mut loss = tape.scale(lm, 1.0 - lambda);
        let mut kp = None;
        if last && lambda > 0.0 {
            let k = kws_params.register(&mut tape);
            let full = if prefix.is_empty() {
                cat
            } else {
                let pre = tape.vector(prefix.to_vec());
                tape.concat(&[pre, cat])
            };
            let n = tape.value(full).len().min(sc.scene.len());
            let trimmed = tape.slice(full, 0, n);
            let probs = self.kws.forward_signal(&mut tape, &k, trimmed)?;
            let lc = kws_loss_on_tape(&mut tape, probs, sc.scene.class)?;
            let weighted = tape.scale(lc, lambda);
            loss = tape.add(loss, weighted);
            kp = Some(k);
        }
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(alloc::format!("stream {}: loss diverged", sc.scene.id)));
        }
        let grads = tape.backward(loss).map_err(|e| match e {
            Error::NonFinite { node, op } => {
                Error::Numeric(alloc::format!("stream {}: non-finite value at node {node} ({op})", sc.scene.id))
            }
            other => other,
        })?;
        let grad_kws = match (self.mode, kp) {
            (Mode::Joint, Some(k)) => Some(k.flat_gradient(&grads)),
            _ => None,
        };
        Ok(WindowOut {
            loss: value,
            grad_opt: p.flat_gradient(&grads),
            grad_kws,
            state: st,
            residual: tape.value(cat).to_vec(),
        })
    }

    fn batch<E: Executor>(
        &self,
        st: &mut TrainState,
        scenes: &[&Scene],
        frozen_kws: &ParamSet,
        rng: &mut ChaCha8Rng,
        exec: &E,
    ) -> Result<(f64, usize)> {
        let hop = self.model.aec().config().hop();
        let prepared: Vec<Prepared<'_>> =
            scenes.iter().map(|s| Prepared { scene: s, u: hop_blocks(&s.u, hop), d: hop_blocks(&s.d, hop) }).collect();
        let frames = prepared.iter().map(|p| p.u.len()).max().unwrap_or(0);
        let mut windows = Vec::new();
        let mut pos = 0;
        while pos < frames {
            let l = rng.gen_range(self.cfg.window.0..=self.cfg.window.1);
            windows.push(pos..(pos + l).min(frames));
            pos += l;
        }
        let mut states: Vec<MetaState> = vec![self.model.new_state(); scenes.len()];
        let mut prefixes: Vec<Vec<f64>> = vec![Vec::new(); scenes.len()];
        let kws_group = match self.mode {
            Mode::Frozen => None,
            Mode::Joint => Some(1),
        };
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (wi, range) in windows.iter().enumerate() {
            let last = wi + 1 == windows.len();
            let kws_params = match kws_group {
                Some(g) => &st.params[g],
                None => frozen_kws,
            };
            let opt = &st.params[0];
            let outs = exec.map(scenes.len(), |i| {
                let sc = &prepared[i];
                let r = range.start.min(sc.u.len())..range.end.min(sc.u.len());
                if r.is_empty() {
                    return Ok(None);
                }
                let ends_here = last || r.end == sc.u.len();
                self.window(opt, kws_params, sc, &states[i], &prefixes[i], r, ends_here).map(Some)
            });
            let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
            let active: Vec<WindowOut> = outs
                .into_iter()
                .enumerate()
                .filter_map(|(i, o)| o.map(|o| (i, o)))
                .map(|(i, o)| {
                    prefixes[i].extend_from_slice(&o.residual);
                    states[i] = o.state.clone();
                    o
                })
                .collect();
            if active.is_empty() {
                continue;
            }
            loss_sum += active.iter().map(|o| o.loss).sum::<f64>();
            count += active.len();
            let g_opt = mean_of(active.iter().map(|o| o.grad_opt.clone()));
            let g_kws = mean_of(active.iter().filter_map(|o| o.grad_kws.clone()));
            let mut grads = match kws_group {
                Some(_) => vec![g_opt, g_kws],
                None => vec![g_opt],
            };
            apply_step(st, &mut grads, self.cfg.clip_norm)?;
        }
        Ok((loss_sum, count))
    }
}

impl CancellerTrainer<'_> {
    /// Validation score: mean meta-loss when `lambda == 0` (lower is better),
    /// macro F1 otherwise (higher is better).
    fn score(&self, report: &crate::eval::MetricsReport) -> f64 {
        if self.cfg.lambda == 0.0 {
            report.mean_meta_loss
        } else {
            report.macro_f1
        }
    }
}

/// Meta-training (`Mode::Frozen`) or joint training (`Mode::Joint`).
/// Returns the best-validation parameters as `[optimizer]` or
/// `[optimizer, classifier]`.
#[allow(clippy::too_many_arguments)]
pub fn train_canceller<E: Executor>(
    trainer: &CancellerTrainer<'_>,
    init_opt: ParamSet,
    init_kws: ParamSet,
    train: &[Scene],
    val: &[Scene],
    resume: Option<TrainState>,
    exec: &E,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let cfg = &trainer.cfg;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(usage!("canceller training needs nonempty train and validation sets"));
    }
    trainer.model.optimizer().check_params(&init_opt)?;
    trainer.kws.check_params(&init_kws)?;
    let higher = cfg.lambda > 0.0;
    let (groups, lrs) = match trainer.mode {
        Mode::Frozen => (vec![init_opt], vec![cfg.lr]),
        Mode::Joint => (vec![init_opt, init_kws.clone()], vec![cfg.lr, cfg.kws_lr]),
    };
    let mut st = resume.unwrap_or_else(|| TrainState::fresh(groups, lrs, cfg, higher));
    let mut history = Vec::new();
    while st.epoch < cfg.max_epochs && !st.stopped {
        let mut rng = epoch_rng(cfg.seed, st.epoch);
        let mut order: Vec<&Scene> = train.iter().collect();
        order.shuffle(&mut rng);
        let (mut loss, mut count) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let (l, c) = trainer.batch(&mut st, batch, &init_kws, &mut rng, exec)?;
            loss += l;
            count += c;
        }
        let kws_params = match trainer.mode {
            Mode::Frozen => &init_kws,
            Mode::Joint => &st.params[1],
        };
        let canceller = Canceller::Meta { model: trainer.model, params: &st.params[0] };
        let report = evaluate(&canceller, trainer.kws, kws_params, val, trainer.warmup, exec)?;
        let epoch = st.epoch;
        let lr = st.lrs[0];
        let records = [
            EpochRecord { epoch, split: Split::Train, loss: loss / count.max(1) as f64, macro_f1: None, erle_db: None, lr },
            EpochRecord {
                epoch,
                split: Split::Val,
                loss: report.mean_meta_loss,
                macro_f1: Some(report.macro_f1),
                erle_db: report.mean_erle_db,
                lr,
            },
        ];
        st.end_epoch(trainer.score(&report));
        for r in records {
            log(&r);
            history.push(r);
        }
    }
    Ok(TrainOutcome::from_state(st, history))
}

/// Identifier of a training run, recorded in checkpoints.
pub fn run_label(mode: Mode, lambda: f64) -> String {
    match mode {
        Mode::Frozen if lambda == 0.0 => "meta".into(),
        Mode::Frozen => "ct-meta".into(),
        Mode::Joint => "joint".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aec::{EchoCanceller, FilterConfig};
    use crate::exec::Sequential;
    use crate::kws::KwsConfig;
    use crate::optimizer::{MetaOptimizer, OptimizerConfig};
    use crate::scene::{make_scene, synth_rir};

    fn model() -> MetaAec {
        let aec = EchoCanceller::new(FilterConfig::new(16, 2)).unwrap();
        let opt = MetaOptimizer::new(OptimizerConfig { hidden: 4, ..OptimizerConfig::new(9, 2) }).unwrap();
        MetaAec::new(aec, opt).unwrap()
    }

    fn scenes(n: usize, seed: u64) -> Vec<Scene> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let u: Vec<f64> = (0..1600).map(|_| rng.gen_range(-0.3..0.3)).collect();
                let kw: Vec<f64> = (0..400).map(|t| (t as f64 * 0.2 * (1 + i % 2) as f64).sin() * 0.1).collect();
                let w = synth_rir(seed + i as u64, 16, 0.001);
                make_scene(&alloc::format!("s{i}"), &u, &kw, &w, None, -10.0, 600, i % 2).unwrap()
            })
            .collect()
    }

    fn quick(lambda: f64) -> TrainConfig {
        TrainConfig { batch_size: 2, lr: 1e-3, max_epochs: 2, window: (4, 8), ..TrainConfig::meta(lambda, 3) }
    }

    #[test]
    fn classifier_overfits_one_example() {
        let kws = Kws::new(KwsConfig::toy(2)).unwrap();
        let init = kws.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let x: Vec<f64> = (0..3200).map(|t| (t as f64 * 0.05).sin() * 0.1).collect();
        let ex = [Example { x, class: 1 }];
        let cfg = TrainConfig { batch_size: 1, lr: 1e-2, max_epochs: 60, ..TrainConfig::kws(0) };
        let out = train_kws(&kws, init, &ex, &ex, &cfg, None, &Sequential, &mut |_| {}).unwrap();
        let first = out.history[0].loss;
        let last = out.history.last().unwrap().loss;
        assert!(last < 0.05 && last < first / 5.0, "{first} -> {last}");
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let m = model();
        let kws = Kws::new(KwsConfig::toy(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (opt0, kws0) = (m.optimizer().init_params(&mut rng), kws.init_params(&mut rng));
        let sc = scenes(2, 5);
        let cfg = TrainConfig { lr: 0.0, kws_lr: 0.0, max_epochs: 1, ..quick(0.5) };
        let t = CancellerTrainer { model: &m, kws: &kws, mode: Mode::Joint, cfg, warmup: 32 };
        let out = train_canceller(&t, opt0.clone(), kws0.clone(), &sc, &sc, None, &Sequential, &mut |_| {}).unwrap();
        assert_eq!(out.last.params, vec![opt0, kws0]);
        assert!(out.last.adam.iter().all(|a| a.t > 0));
    }

    #[test]
    fn frozen_optimizer_group_reduces_to_classifier_fine_tuning() {
        let m = model();
        let kws = Kws::new(KwsConfig::toy(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (opt0, kws0) = (m.optimizer().init_params(&mut rng), kws.init_params(&mut rng));
        let sc = scenes(2, 9);
        let cfg = TrainConfig { lr: 0.0, kws_lr: 1e-3, max_epochs: 1, ..quick(0.5) };
        let t = CancellerTrainer { model: &m, kws: &kws, mode: Mode::Joint, cfg, warmup: 32 };
        let out = train_canceller(&t, opt0.clone(), kws0.clone(), &sc, &sc, None, &Sequential, &mut |_| {}).unwrap();
        assert_eq!(out.last.params[0], opt0);
        assert_ne!(out.last.params[1], kws0);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let m = model();
        let kws = Kws::new(KwsConfig::toy(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (opt0, kws0) = (m.optimizer().init_params(&mut rng), kws.init_params(&mut rng));
        let sc = scenes(3, 7);
        let run = |epochs: usize, resume: Option<TrainState>| {
            let cfg = TrainConfig { max_epochs: epochs, ..quick(0.3) };
            let t = CancellerTrainer { model: &m, kws: &kws, mode: Mode::Joint, cfg, warmup: 32 };
            train_canceller(&t, opt0.clone(), kws0.clone(), &sc, &sc[..2], resume, &Sequential, &mut |_| {}).unwrap()
        };
        let full = run(2, None);
        let half = run(1, None);
        let resumed = run(2, Some(half.last));
        assert_eq!(full.last, resumed.last);
        assert_eq!(full.history[2..], resumed.history[..]);
    }

    #[test]
    fn meta_training_lowers_residual_power() {
        let m = model();
        let kws = Kws::new(KwsConfig::toy(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (opt0, kws0) = (m.optimizer().init_params(&mut rng), kws.init_params(&mut rng));
        let sc = scenes(4, 11);
        let cfg = TrainConfig { lr: 3e-3, max_epochs: 6, ..quick(0.0) };
        let t = CancellerTrainer { model: &m, kws: &kws, mode: Mode::Frozen, cfg, warmup: 32 };
        let out = train_canceller(&t, opt0.clone(), kws0.clone(), &sc, &sc, None, &Sequential, &mut |_| {}).unwrap();
        let before = evaluate(&Canceller::Meta { model: &m, params: &opt0 }, &kws, &kws0, &sc, 32, &Sequential).unwrap();
        assert!(out.best_score.unwrap() < before.mean_meta_loss - 1.0, "{:?} vs {}", out.best_score, before.mean_meta_loss);
        assert_eq!(out.best.len(), 1);
    }

    #[test]
    fn bad_settings_are_rejected() {
        assert!(TrainConfig { lambda: 1.5, ..TrainConfig::meta(0.0, 0) }.validate().is_err());
        assert!(TrainConfig { window: (9, 8), ..TrainConfig::meta(0.0, 0) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::kws(0) }.validate().is_err());
        assert_ne!(epoch_rng(1, 0).gen::<u64>(), epoch_rng(1, 1).gen::<u64>());
    }
}
