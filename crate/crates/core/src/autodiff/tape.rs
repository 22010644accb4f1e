use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dsp::{LogMel, RealFft};
use crate::error::{usage, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Ln,
    Square,
    Sqrt,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// Derivative from input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `x (r x c) + v (c)`
    AddRowVec(Var, Var),
    /// `x (r x c) + v (r)`
    AddColVec(Var, Var),
    /// `x (r x c) * v (r)`
    MulColVec(Var, Var),
    /// `x * s` with `s` a single element
    MulScalar(Var, Var),
    MatMul(Var, Var),
    Unary(Var, Unary),
    /// Elementwise map; only the derivative is needed on the way back.
    Map(Var, fn(f64) -> f64),
    Sum(Var),
    /// `x (r x c) -> r`, mean over columns
    MeanCols(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    /// `out[i] = x[idx[i]]`
    Gather(Var, Arc<[usize]>),
    /// `out[idx[i]] += x[i]`
    IndexAdd(Var, Arc<[usize]>),
    Compress { re: Var, im: Var, imag: bool },
    Rfft { x: Var, fft: Arc<RealFft>, imag: bool },
    Irfft { re: Var, im: Var, fft: Arc<RealFft> },
    Conv1d { x: Var, w: Var, kernel: usize, dilation: usize },
    LayerNormCols { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    BceMean { p: Var, target: Vec<f64> },
    LogMel { x: Var, mel: Arc<LogMel> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRowVec(..) => "add_row_vec",
            Op::AddColVec(..) => "add_col_vec",
            Op::MulColVec(..) => "mul_col_vec",
            Op::MulScalar(..) => "mul_scalar",
            Op::MatMul(..) => "matmul",
            Op::Unary(_, u) => match u {
                Unary::Sigmoid => "sigmoid",
                Unary::Tanh => "tanh",
                Unary::Relu => "relu",
                Unary::Exp => "exp",
                Unary::Ln => "ln",
                Unary::Square => "square",
                Unary::Sqrt => "sqrt",
            },
            Op::Map(..) => "map",
            Op::Sum(..) => "sum",
            Op::MeanCols(..) => "mean_cols",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Gather(..) => "gather",
            Op::IndexAdd(..) => "index_add",
            Op::Compress { .. } => "compress",
            Op::Rfft { .. } => "rfft",
            Op::Irfft { .. } => "irfft",
            Op::Conv1d { .. } => "conv1d",
            Op::LayerNormCols { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::BceMean { .. } => "bce",
            Op::LogMel { .. } => "log_mel",
        }
    }
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Records real-valued tensor operations for reverse-mode differentiation.
///
/// Every node holds a row-major `rows x cols` matrix. Complex quantities are
/// carried as separate real and imaginary nodes (see [`super::CVar`]).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Vec<f64>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Adjoint of `v`; all zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Vec<f64> {
        let a = &self.adj[v.0];
        if a.is_empty() {
            vec![0.0; self.lens[v.0]]
        } else {
            a.clone()
        }
    }

    /// Adjoint of `v`, or `None` if nothing reached it.
    pub fn try_get(&self, v: Var) -> Option<&[f64]> {
        let a = &self.adj[v.0];
        (!a.is_empty()).then_some(a.as_slice())
    }
}

fn acc(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let a = &mut adj[v.0];
    if a.is_empty() {
        *a = vec![0.0; len];
    }
    a
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape does not match data");
        self.push(value, rows, cols, Op::Leaf)
    }

    /// Records a row vector input.
    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.leaf(value, 1, n)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(vec![value], 1, 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.numel(a),
            self.numel(b),
            "{what}: operand sizes differ ({:?} vs {:?})",
            self.shape(a),
            self.shape(b)
        );
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_shape(a, b, op.name());
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(value, r, c, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * s).collect();
        self.push(value, r, c, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x + s).collect();
        self.push(value, r, c, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    /// Adds `v` (length `cols`) to every row of `x`.
    pub fn add_row_vec(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.numel(v), c, "add_row_vec: vector length must equal column count");
        let mut value = self.nodes[x.0].value.clone();
        let vv = &self.nodes[v.0].value;
        for row in value.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(vv) {
                *o += b;
            }
        }
        self.push(value, r, c, Op::AddRowVec(x, v))
    }

    /// Adds `v[i]` to every entry of row `i` of `x`.
    pub fn add_col_vec(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.numel(v), r, "add_col_vec: vector length must equal row count");
        let mut value = self.nodes[x.0].value.clone();
        let vv = &self.nodes[v.0].value;
        for (row, b) in value.chunks_mut(c).zip(vv) {
            row.iter_mut().for_each(|o| *o += b);
        }
        self.push(value, r, c, Op::AddColVec(x, v))
    }

    /// Multiplies row `i` of `x` by `v[i]`.
    pub fn mul_col_vec(&mut self, x: Var, v: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.numel(v), r, "mul_col_vec: vector length must equal row count");
        let mut value = self.nodes[x.0].value.clone();
        let vv = &self.nodes[v.0].value;
        for (row, s) in value.chunks_mut(c).zip(vv) {
            row.iter_mut().for_each(|o| *o *= s);
        }
        self.push(value, r, c, Op::MulColVec(x, v))
    }

    /// Multiplies every entry of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.numel(s), 1, "mul_scalar: scale must have one element");
        let (r, c) = self.shape(x);
        let k = self.scalar(s);
        let value = self.nodes[x.0].value.iter().map(|v| v * k).collect();
        self.push(value, r, c, Op::MulScalar(x, s))
    }

    /// Matrix product `(m x k) (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions differ ({m}x{k} * {k2}x{n})");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, y) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        self.push(out, m, n, Op::MatMul(a, b))
    }

    pub fn unary(&mut self, a: Var, u: Unary) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| u.apply(x)).collect();
        self.push(value, r, c, Op::Unary(a, u))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(value, r, c, Op::Map(a, df))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], 1, 1, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.numel(a) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over columns: `(r x c) -> (r x 1)`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .chunks(c)
            .map(|row| row.iter().sum::<f64>() / c as f64)
            .collect();
        self.push(value, r, 1, Op::MeanCols(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.numel(a), rows * cols, "reshape: element count changes");
        let value = self.nodes[a.0].value.clone();
        self.push(value, rows, cols, Op::Reshape(a))
    }

    /// Flat concatenation into a row vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.numel(p)).sum());
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = value.len();
        self.push(value, 1, n, Op::Concat(parts.to_vec()))
    }

    /// `out[i] = x[index[i]]`, shaped `rows x cols`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather: index length must equal output size");
        let xv = &self.nodes[x.0].value;
        let value = index.iter().map(|&i| xv[i]).collect();
        self.push(value, rows, cols, Op::Gather(x, index))
    }

    /// Contiguous flat slice `[start, end)` as a row vector.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Var {
        let index: Arc<[usize]> = (start..end).collect();
        self.gather(x, index, 1, end - start)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(x);
        let w = end - start;
        let index: Arc<[usize]> =
            (0..r).flat_map(|i| (start..end).map(move |j| i * c + j)).collect();
        self.gather(x, index, r, w)
    }

    /// `out[index[i]] += x[i]` into a zero `rows x cols` output.
    pub fn index_add(&mut self, x: Var, index: Arc<[usize]>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), self.numel(x), "index_add: one index per input element");
        let mut value = vec![0.0; rows * cols];
        for (&i, &v) in index.iter().zip(&self.nodes[x.0].value) {
            value[i] += v;
        }
        self.push(value, rows, cols, Op::IndexAdd(x, index))
    }

    /// Magnitude compression `z -> ln(1 + |z|) e^{i arg z}` on split parts.
    pub fn compress(&mut self, re: Var, im: Var) -> (Var, Var) {
        self.same_shape(re, im, "compress");
        let (r, c) = self.shape(re);
        let mut out_re = Vec::with_capacity(r * c);
        let mut out_im = Vec::with_capacity(r * c);
        for (&a, &b) in self.nodes[re.0].value.iter().zip(&self.nodes[im.0].value) {
            let h = compress_gain(a.hypot(b));
            out_re.push(a * h);
            out_im.push(b * h);
        }
        let vr = self.push(out_re, r, c, Op::Compress { re, im, imag: false });
        let vi = self.push(out_im, r, c, Op::Compress { re, im, imag: true });
        (vr, vi)
    }

    /// Real and imaginary parts of the non-redundant spectrum of `x`.
    pub fn rfft(&mut self, x: Var, fft: &Arc<RealFft>) -> (Var, Var) {
        let spec = fft
            .forward(&self.nodes[x.0].value)
            .expect("rfft: input length must equal transform size");
        let nb = spec.len();
        let re = spec.iter().map(|z| z.re).collect();
        let im = spec.iter().map(|z| z.im).collect();
        let vr = self.push(re, 1, nb, Op::Rfft { x, fft: fft.clone(), imag: false });
        let vi = self.push(im, 1, nb, Op::Rfft { x, fft: fft.clone(), imag: true });
        (vr, vi)
    }

    /// Real block from a non-redundant spectrum.
    pub fn irfft(&mut self, re: Var, im: Var, fft: &Arc<RealFft>) -> Var {
        self.same_shape(re, im, "irfft");
        let spec: Vec<crate::C64> = self.nodes[re.0]
            .value
            .iter()
            .zip(&self.nodes[im.0].value)
            .map(|(&a, &b)| crate::C64::new(a, b))
            .collect();
        let value = fft.inverse(&spec).expect("irfft: bin count must match transform");
        let n = value.len();
        self.push(value, 1, n, Op::Irfft { re, im, fft: fft.clone() })
    }

    /// Dilated 1-D convolution over time with symmetric zero padding.
    ///
    /// `x` is `c_in x t`, `w` is `c_out x (c_in * kernel)` with
    /// `w[o, c * kernel + j]`; output is `c_out x t`.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize, dilation: usize) -> Var {
        let (cin, t) = self.shape(x);
        let (cout, wk) = self.shape(w);
        assert_eq!(wk, cin * kernel, "conv1d: weight columns must be c_in * kernel");
        assert!(kernel % 2 == 1, "conv1d: kernel must be odd for symmetric padding");
        let half = (kernel / 2) as isize;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; cout * t];
        for o in 0..cout {
            let orow = &mut out[o * t..(o + 1) * t];
            for c in 0..cin {
                let xrow = &xv[c * t..(c + 1) * t];
                for j in 0..kernel {
                    let wt = wv[o * wk + c * kernel + j];
                    let shift = (j as isize - half) * dilation as isize;
                    let (lo, hi) = valid_range(t, shift);
                    for s in lo..hi {
                        orow[s] += wt * xrow[(s as isize + shift) as usize];
                    }
                }
            }
        }
        self.push(out, cout, t, Op::Conv1d { x, w, kernel, dilation })
    }

    /// Normalizes each column to zero mean and unit variance.
    pub fn layer_norm_cols(&mut self, x: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(c);
        for j in 0..c {
            let mean = (0..r).map(|i| xv[i * c + j]).sum::<f64>() / r as f64;
            let var = (0..r).map(|i| (xv[i * c + j] - mean).powi(2)).sum::<f64>() / r as f64;
            let is = 1.0 / (var + eps).sqrt();
            for i in 0..r {
                out[i * c + j] = (xv[i * c + j] - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, r, c, Op::LayerNormCols { x, inv_std })
    }

    /// Softmax over all elements.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let m = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let value = e.iter().map(|v| v / s).collect();
        self.push(value, r, c, Op::Softmax(x))
    }

    /// Binary cross-entropy averaged over elements,
    /// `-mean(t ln p + (1 - t) ln(1 - p))`, with `p` clamped away from 0 and 1.
    pub fn bce_mean(&mut self, p: Var, target: Vec<f64>) -> Var {
        assert_eq!(self.numel(p), target.len(), "bce: target length must match");
        let n = target.len() as f64;
        let loss = self.nodes[p.0]
            .value
            .iter()
            .zip(&target)
            .map(|(&pv, &t)| {
                let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        self.push(vec![loss], 1, 1, Op::BceMean { p, target })
    }

    /// Log-mel features of a signal, `n_mels x frames`.
    pub fn log_mel(&mut self, x: Var, mel: &Arc<LogMel>) -> Var {
        let (value, frames) = mel.features(&self.nodes[x.0].value);
        self.push(value, mel.n_mels(), frames, Op::LogMel { x, mel: mel.clone() })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.numel(loss) != 1 {
            return Err(usage!("backward requires a scalar loss, got shape {:?}", self.shape(loss)));
        }
        if let Some((i, node)) =
            self.nodes.iter().enumerate().find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite { node: i, op: node.op.name() });
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        adj[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = core::mem::take(&mut adj[i]);
            self.propagate(node, &g, &mut adj);
        }
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { adj, lens })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Vec<f64>]) {
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                axpy(acc(adj, *a, len(*a)), 1.0, g);
                axpy(acc(adj, *b, len(*b)), 1.0, g);
            }
            Op::Sub(a, b) => {
                axpy(acc(adj, *a, len(*a)), 1.0, g);
                axpy(acc(adj, *b, len(*b)), -1.0, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                for (o, (gi, bi)) in acc(adj, *a, av.len()).iter_mut().zip(g.iter().zip(bv)) {
                    *o += gi * bi;
                }
                for (o, (gi, ai)) in acc(adj, *b, bv.len()).iter_mut().zip(g.iter().zip(av)) {
                    *o += gi * ai;
                }
            }
            Op::Scale(a, s) => axpy(acc(adj, *a, len(*a)), *s, g),
            Op::AddScalar(a) => axpy(acc(adj, *a, len(*a)), 1.0, g),
            Op::AddRowVec(x, v) => {
                axpy(acc(adj, *x, len(*x)), 1.0, g);
                let c = node.cols;
                let dv = acc(adj, *v, c);
                for row in g.chunks(c) {
                    for (o, gi) in dv.iter_mut().zip(row) {
                        *o += gi;
                    }
                }
            }
            Op::AddColVec(x, v) => {
                axpy(acc(adj, *x, len(*x)), 1.0, g);
                let c = node.cols;
                let dv = acc(adj, *v, node.rows);
                for (o, row) in dv.iter_mut().zip(g.chunks(c)) {
                    *o += row.iter().sum::<f64>();
                }
            }
            Op::MulColVec(x, v) => {
                let c = node.cols;
                let (xv, vv) = (val(*x), val(*v));
                let dx = acc(adj, *x, xv.len());
                for ((drow, grow), s) in dx.chunks_mut(c).zip(g.chunks(c)).zip(vv) {
                    for (o, gi) in drow.iter_mut().zip(grow) {
                        *o += gi * s;
                    }
                }
                let dv = acc(adj, *v, vv.len());
                for (o, (grow, xrow)) in dv.iter_mut().zip(g.chunks(c).zip(xv.chunks(c))) {
                    *o += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::MulScalar(x, s) => {
                let k = val(*s)[0];
                let xv = val(*x);
                axpy(acc(adj, *x, xv.len()), k, g);
                let d: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                acc(adj, *s, 1)[0] += d;
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let (av, bv) = (val(*a), val(*b));
                // dA = G B^T
                let da = acc(adj, *a, m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                // dB = A^T G
                let db = acc(adj, *b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (o, gi) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += x * gi;
                        }
                    }
                }
            }
            Op::Unary(a, u) => {
                let av = val(*a);
                let d = acc(adj, *a, av.len());
                for ((o, gi), (&x, &y)) in d.iter_mut().zip(g).zip(av.iter().zip(&node.value)) {
                    *o += gi * u.derivative(x, y);
                }
            }
            Op::Map(a, df) => {
                let av = val(*a);
                let d = acc(adj, *a, av.len());
                for ((o, gi), &x) in d.iter_mut().zip(g).zip(av) {
                    *o += gi * df(x);
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                acc(adj, *a, len(*a)).iter_mut().for_each(|o| *o += g0);
            }
            Op::MeanCols(a) => {
                let (_, c) = self.shape(*a);
                let d = acc(adj, *a, len(*a));
                for (row, gi) in d.chunks_mut(c).zip(g) {
                    let s = gi / c as f64;
                    row.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::Reshape(a) => axpy(acc(adj, *a, len(*a)), 1.0, g),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = len(p);
                    axpy(acc(adj, p, n), 1.0, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Gather(x, index) => {
                let d = acc(adj, *x, len(*x));
                for (&i, gi) in index.iter().zip(g) {
                    d[i] += gi;
                }
            }
            Op::IndexAdd(x, index) => {
                let d = acc(adj, *x, len(*x));
                for (o, &i) in d.iter_mut().zip(index.iter()) {
                    *o += g[i];
                }
            }
            Op::Compress { re, im, imag } => {
                let (rv, iv) = (val(*re), val(*im));
                let n = rv.len();
                let mut dre = vec![0.0; n];
                let mut dim = vec![0.0; n];
                for i in 0..n {
                    let (a, b) = (rv[i], iv[i]);
                    let m = a.hypot(b);
                    let h = compress_gain(m);
                    // (u/m) * dh/dm, with u in {a, b}
                    let (ja, jb) = if m > 0.0 {
                        let dh = compress_gain_slope(m);
                        (a / m * dh, b / m * dh)
                    } else {
                        (0.0, 0.0)
                    };
                    // out = own * h; d out / d a, d out / d b
                    let own = if *imag { b } else { a };
                    let mut da = own * ja;
                    let mut db = own * jb;
                    if *imag {
                        db += h;
                    } else {
                        da += h;
                    }
                    dre[i] = g[i] * da;
                    dim[i] = g[i] * db;
                }
                axpy(acc(adj, *re, n), 1.0, &dre);
                axpy(acc(adj, *im, n), 1.0, &dim);
            }
            Op::Rfft { x, fft, imag } => {
                let nb = g.len();
                let zeros = vec![0.0; nb];
                let (gr, gi) = if *imag { (&zeros[..], g) } else { (g, &zeros[..]) };
                fft.forward_adjoint(gr, gi, acc(adj, *x, fft.len()));
            }
            Op::Irfft { re, im, fft } => {
                let nb = fft.bins();
                let mut dr = vec![0.0; nb];
                let mut di = vec![0.0; nb];
                fft.inverse_adjoint(g, &mut dr, &mut di);
                axpy(acc(adj, *re, nb), 1.0, &dr);
                axpy(acc(adj, *im, nb), 1.0, &di);
            }
            Op::Conv1d { x, w, kernel, dilation } => {
                let (cin, t) = self.shape(*x);
                let (cout, wk) = self.shape(*w);
                let half = (*kernel / 2) as isize;
                let (xv, wv) = (val(*x), val(*w));
                let mut dx = vec![0.0; cin * t];
                let mut dw = vec![0.0; cout * wk];
                for o in 0..cout {
                    let grow = &g[o * t..(o + 1) * t];
                    for c in 0..cin {
                        let xrow = &xv[c * t..(c + 1) * t];
                        let dxrow = &mut dx[c * t..(c + 1) * t];
                        for j in 0..*kernel {
                            let wi = o * wk + c * kernel + j;
                            let wt = wv[wi];
                            let shift = (j as isize - half) * *dilation as isize;
                            let (lo, hi) = valid_range(t, shift);
                            let mut s_w = 0.0;
                            for s in lo..hi {
                                let src = (s as isize + shift) as usize;
                                s_w += grow[s] * xrow[src];
                                dxrow[src] += grow[s] * wt;
                            }
                            dw[wi] += s_w;
                        }
                    }
                }
                axpy(acc(adj, *x, cin * t), 1.0, &dx);
                axpy(acc(adj, *w, cout * wk), 1.0, &dw);
            }
            Op::LayerNormCols { x, inv_std } => {
                let (r, c) = (node.rows, node.cols);
                let y = &node.value;
                let d = acc(adj, *x, r * c);
                for j in 0..c {
                    let mg = (0..r).map(|i| g[i * c + j]).sum::<f64>() / r as f64;
                    let mgy = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum::<f64>() / r as f64;
                    for i in 0..r {
                        d[i * c + j] += inv_std[j] * (g[i * c + j] - mg - y[i * c + j] * mgy);
                    }
                }
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                let d = acc(adj, *x, p.len());
                for (o, (gi, pi)) in d.iter_mut().zip(g.iter().zip(p)) {
                    *o += pi * (gi - dot);
                }
            }
            Op::BceMean { p, target } => {
                let pv = val(*p);
                let n = pv.len() as f64;
                let g0 = g[0];
                let d = acc(adj, *p, pv.len());
                for (o, (&pi, &t)) in d.iter_mut().zip(pv.iter().zip(target)) {
                    let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    *o += g0 * -(t / pc - (1.0 - t) / (1.0 - pc)) / n;
                }
            }
            Op::LogMel { x, mel } => {
                let xv = val(*x);
                mel.features_adjoint(xv, g, acc(adj, *x, xv.len()));
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Output positions `s` for which `s + shift` lies in `[0, t)`.
fn valid_range(t: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (t as isize - shift).clamp(0, t as isize) as usize;
    (lo.min(hi), hi)
}

/// `ln(1 + m) / m`, equal to 1 at `m = 0`.
pub(crate) fn compress_gain(m: f64) -> f64 {
    if m < 1e-6 {
        1.0 - m / 2.0 + m * m / 3.0
    } else {
        m.ln_1p() / m
    }
}

/// Derivative of [`compress_gain`] in `m`.
fn compress_gain_slope(m: f64) -> f64 {
    if m < 1e-4 {
        -0.5 + 2.0 * m / 3.0 - 0.75 * m * m
    } else {
        (m / (1.0 + m) - m.ln_1p()) / (m * m)
    }
}
