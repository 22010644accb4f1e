//! Built-in verification suites: overlap-save against direct convolution,
//! adjoints against central differences, and loss identities.

use std::sync::Arc;

use metaaf_core::aec::{hop_blocks, EchoCanceller, FilterConfig};
use metaaf_core::autodiff::{check_gradients, CVar, Tape, Var};
use metaaf_core::dsp::{LogMel, RealFft};
use metaaf_core::loss::{joint_loss, kws_loss, meta_loss, meta_loss_on_tape};
use metaaf_core::params::{TapeParams, Tensor};
use metaaf_core::scene::convolve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::build_meta;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, noise(rng, rows * cols))
}

/// Largest relative error of the streaming residual of a fixed filter
/// against `d - u * w` computed by direct convolution.
pub fn overlap_save_error(window: usize, blocks: usize, taps: usize, len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aec = EchoCanceller::new(FilterConfig::new(window, blocks)).expect("valid filter");
    let w = noise(&mut rng, taps);
    let u = noise(&mut rng, len);
    let d = noise(&mut rng, len);
    let mut state = aec.new_state();
    state.theta = aec.theta_from_response(&w).expect("response fits");
    let hop = aec.config().hop();
    let mut e = Vec::new();
    for (ub, db) in hop_blocks(&u, hop).iter().zip(&hop_blocks(&d, hop)) {
        e.extend(aec.filter_step(&mut state, ub, db).expect("finite").e_time);
    }
    e.truncate(len);
    let y = convolve(&u, &w);
    let reference: Vec<f64> = d.iter().zip(&y).map(|(d, y)| d - y).collect();
    let num: f64 = e.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

pub fn overlap_save() -> Vec<Check> {
    [(16, 2, 16, 400), (64, 2, 64, 2000), (64, 4, 100, 2000), (1024, 4, 2048, 16000)]
        .iter()
        .enumerate()
        .map(|(i, &(k, b, taps, len))| {
            let err = overlap_save_error(k, b, taps, len, i as u64);
            Check::new(&format!("overlap-save K={k} B={b} taps={taps}"), err < 1e-6, format!("rel error {err:.2e}"))
        })
        .collect()
}

/// Random projection so every output element reaches the scalar.
fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
    let n = t.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.leaf(noise(&mut rng, n), 1, n);
    let flat = t.reshape(v, 1, n);
    let m = t.mul(flat, w);
    t.sum(m)
}

const EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

fn grad_check<F: Fn(&mut Tape, &[Var]) -> Var>(name: &str, f: F, params: &[Tensor]) -> Check {
    match check_gradients(f, params, EPS, GRAD_TOL) {
        Ok(r) => Check::new(name, r.passed(), format!("max rel error {:.2e}", r.worst())),
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

type Primitive = (&'static str, fn(&mut Tape, &[Var]) -> Var, Vec<(usize, usize)>, bool);

pub fn gradients() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m34 = vec![(3, 4)];
    let m34x2 = vec![(3, 4), (3, 4)];
    let prims: Vec<Primitive> = vec![
        ("add", |t, v| { let y = t.add(v[0], v[1]); project(t, y, 1) }, m34x2.clone(), false),
        ("sub", |t, v| { let y = t.sub(v[0], v[1]); project(t, y, 2) }, m34x2.clone(), false),
        ("mul", |t, v| { let y = t.mul(v[0], v[1]); project(t, y, 3) }, m34x2.clone(), false),
        ("scale", |t, v| { let y = t.scale(v[0], -2.5); project(t, y, 4) }, m34.clone(), false),
        ("add_row_vec", |t, v| { let y = t.add_row_vec(v[0], v[1]); let y = t.square(y); project(t, y, 5) }, vec![(3, 4), (1, 4)], false),
        ("add_col_vec", |t, v| { let y = t.add_col_vec(v[0], v[1]); let y = t.square(y); project(t, y, 6) }, vec![(3, 4), (3, 1)], false),
        ("mul_col_vec", |t, v| { let y = t.mul_col_vec(v[0], v[1]); project(t, y, 7) }, vec![(3, 4), (3, 1)], false),
        ("mul_scalar", |t, v| { let y = t.mul_scalar(v[0], v[1]); project(t, y, 8) }, vec![(3, 4), (1, 1)], false),
        ("matmul", |t, v| { let y = t.matmul(v[0], v[1]); project(t, y, 9) }, vec![(3, 4), (4, 2)], false),
        ("mean_cols", |t, v| { let y = t.mean_cols(v[0]); let y = t.square(y); project(t, y, 10) }, m34.clone(), false),
        ("sigmoid", |t, v| { let y = t.sigmoid(v[0]); project(t, y, 11) }, m34.clone(), false),
        ("tanh", |t, v| { let y = t.tanh(v[0]); project(t, y, 12) }, m34.clone(), false),
        ("exp", |t, v| { let y = t.exp(v[0]); project(t, y, 13) }, m34.clone(), false),
        ("ln", |t, v| { let y = t.ln(v[0]); project(t, y, 14) }, m34.clone(), true),
        ("sqrt", |t, v| { let y = t.sqrt(v[0]); project(t, y, 15) }, m34.clone(), true),
        ("relu", |t, v| { let y = t.relu(v[0]); project(t, y, 16) }, m34.clone(), true),
        ("concat", |t, v| { let y = t.concat(&[v[0], v[1]]); let y = t.square(y); project(t, y, 17) }, vec![(1, 4), (1, 3)], false),
        ("slice_cols", |t, v| { let y = t.slice_cols(v[0], 1, 3); let y = t.square(y); project(t, y, 18) }, m34.clone(), false),
        ("gather", |t, v| { let y = t.gather(v[0], vec![0, 3, 3, 11, 5, 7].into(), 2, 3); let y = t.square(y); project(t, y, 19) }, m34.clone(), false),
        ("index_add", |t, v| { let y = t.index_add(v[0], vec![0, 2, 2, 1, 0].into(), 1, 3); let y = t.square(y); project(t, y, 20) }, vec![(1, 5)], false),
        ("compress", |t, v| { let (a, b) = t.compress(v[0], v[1]); let x = project(t, a, 21); let y = project(t, b, 22); t.add(x, y) }, vec![(1, 8), (1, 8)], false),
        ("complex mul", |t, v| { let z = t.cmul(CVar { re: v[0], im: v[1] }, CVar { re: v[2], im: v[3] }); t.cnorm_sqr_sum(z) }, vec![(1, 4); 4], false),
        ("rfft", |t, v| { let f = Arc::new(RealFft::new(16).unwrap()); let z = t.crfft(v[0], &f); let a = project(t, z.re, 23); let b = project(t, z.im, 24); t.add(a, b) }, vec![(1, 16)], false),
        ("irfft", |t, v| { let f = Arc::new(RealFft::new(16).unwrap()); let y = t.irfft(v[0], v[1], &f); project(t, y, 25) }, vec![(1, 9), (1, 9)], false),
        ("conv1d", |t, v| { let y = t.conv1d(v[0], v[1], 5, 2); project(t, y, 26) }, vec![(3, 7), (2, 15)], false),
        ("layer_norm", |t, v| { let y = t.layer_norm_cols(v[0], 1e-5); project(t, y, 27) }, vec![(3, 7)], false),
        ("softmax", |t, v| { let y = t.softmax(v[0]); project(t, y, 28) }, vec![(1, 4)], false),
        ("bce", |t, v| { let p = t.softmax(v[0]); t.bce_mean(p, vec![0.0, 1.0, 0.0, 0.0]) }, vec![(1, 4)], false),
        ("log_mel", |t, v| { let m = Arc::new(LogMel::new(32, 16, 6, 16_000.0).unwrap()); let y = t.log_mel(v[0], &m); project(t, y, 29) }, vec![(1, 50)], false),
        ("meta_loss", |t, v| meta_loss_on_tape(t, v[0]), vec![(1, 12)], false),
    ];
    let mut out: Vec<Check> = prims
        .into_iter()
        .map(|(name, f, shapes, positive)| {
            let params: Vec<Tensor> = shapes
                .iter()
                .map(|&(r, c)| {
                    let mut t = rand_tensor(&mut rng, r, c);
                    if positive {
                        t.data.iter_mut().for_each(|v| *v = v.abs() + 0.5);
                    }
                    t
                })
                .collect();
            grad_check(name, f, &params)
        })
        .collect();
    out.push(unrolled_check());
    out
}

/// Two unrolled filter and optimizer steps at `K = 16` under the meta-loss.
fn unrolled_check() -> Check {
    let m = build_meta(FilterConfig::new(16, 2), 3, 5, 2).expect("valid model");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ps = m.optimizer().init_params(&mut rng);
    let u: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 8)).collect();
    let d: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 8)).collect();
    let mut start = m.new_state();
    start.filter.input_spectra[1] = m.aec().fft().forward(&noise(&mut rng, 16)).unwrap();
    start.filter.playback = noise(&mut rng, 16);
    start.filter.mixture = noise(&mut rng, 16);
    grad_check(
        "2-step unrolled filter + optimizer + meta-loss (K=16)",
        |tape, vars| {
            let p = TapeParams::from_tensor_vars(&ps, vars);
            let mut st = start.clone();
            let e = m.unroll(tape, &p, &mut st, &u, &d).expect("finite unroll");
            let cat = tape.concat(&e);
            meta_loss_on_tape(tape, cat)
        },
        &ps.tensors(),
    )
}

pub const LOSS_TOL: f64 = 1e-9;

pub fn losses() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Power far above the floor inside the log.
    let e: Vec<f64> = noise(&mut rng, 256).iter().map(|v| 30.0 * v).collect();
    let worst_scale = [0.5, 2.0, 3.7, 10.0]
        .iter()
        .map(|&alpha: &f64| {
            let scaled: Vec<f64> = e.iter().map(|v| v * alpha).collect();
            (meta_loss(&scaled).unwrap() - meta_loss(&e).unwrap() - 2.0 * alpha.ln()).abs()
        })
        .fold(0.0, f64::max);
    let (c, m) = (0.731, -4.2);
    let b0 = (joint_loss(c, m, 0.0).unwrap() - m).abs();
    let b1 = (joint_loss(c, m, 1.0).unwrap() - c).abs();
    let half = (joint_loss(c, m, 0.5).unwrap() - (c + m) / 2.0).abs();
    let ln2 = (kws_loss(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs();
    vec![
        Check::new("meta-loss scaling adds 2 ln(alpha)", worst_scale < LOSS_TOL, format!("max deviation {worst_scale:.2e}")),
        Check::new("joint loss at lambda=0 is the meta-loss", b0 < LOSS_TOL, format!("{b0:.2e}")),
        Check::new("joint loss at lambda=1 is the classification loss", b1 < LOSS_TOL, format!("{b1:.2e}")),
        Check::new("joint loss at lambda=0.5 is the mean", half < LOSS_TOL, format!("{half:.2e}")),
        Check::new("BCE of a uniform 2-class prediction is ln 2", ln2 < LOSS_TOL, format!("{ln2:.2e}")),
        Check::new("lambda outside [0, 1] is rejected", joint_loss(c, m, 1.5).is_err(), String::new()),
    ]
}

pub fn all() -> Vec<Check> {
    let mut v = overlap_save();
    v.extend(gradients());
    v.extend(losses());
    v
}
