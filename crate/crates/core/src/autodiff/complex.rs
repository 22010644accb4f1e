use alloc::sync::Arc;
use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::dsp::RealFft;
use crate::C64;

/// A complex tensor recorded as separate real and imaginary nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn cleaf(&mut self, z: &[C64], rows: usize, cols: usize) -> CVar {
        let re = self.leaf(z.iter().map(|v| v.re).collect(), rows, cols);
        let im = self.leaf(z.iter().map(|v| v.im).collect(), rows, cols);
        CVar { re, im }
    }

    pub fn cvalue(&self, z: CVar) -> Vec<C64> {
        self.value(z.re)
            .iter()
            .zip(self.value(z.im))
            .map(|(&a, &b)| C64::new(a, b))
            .collect()
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> CVar {
        CVar { re: self.add(a.re, b.re), im: self.add(a.im, b.im) }
    }

    pub fn csub(&mut self, a: CVar, b: CVar) -> CVar {
        CVar { re: self.sub(a.re, b.re), im: self.sub(a.im, b.im) }
    }

    pub fn cscale(&mut self, a: CVar, s: f64) -> CVar {
        CVar { re: self.scale(a.re, s), im: self.scale(a.im, s) }
    }

    pub fn cconj(&mut self, a: CVar) -> CVar {
        CVar { re: a.re, im: self.neg(a.im) }
    }

    /// Elementwise complex product.
    pub fn cmul(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar { re: self.sub(rr, ii), im: self.add(ri, ir) }
    }

    /// Elementwise `conj(a) * b`.
    pub fn cmul_conj(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar { re: self.add(rr, ii), im: self.sub(ri, ir) }
    }

    /// Multiplies every entry of `x` by the single complex element `s`.
    pub fn cmul_scalar(&mut self, x: CVar, s: CVar) -> CVar {
        let rr = self.mul_scalar(x.re, s.re);
        let ii = self.mul_scalar(x.im, s.im);
        let ri = self.mul_scalar(x.re, s.im);
        let ir = self.mul_scalar(x.im, s.re);
        CVar { re: self.sub(rr, ii), im: self.add(ri, ir) }
    }

    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.matmul(a.re, b.re);
        let ii = self.matmul(a.im, b.im);
        let ri = self.matmul(a.re, b.im);
        let ir = self.matmul(a.im, b.re);
        CVar { re: self.sub(rr, ii), im: self.add(ri, ir) }
    }

    pub fn cadd_row_vec(&mut self, x: CVar, v: CVar) -> CVar {
        CVar { re: self.add_row_vec(x.re, v.re), im: self.add_row_vec(x.im, v.im) }
    }

    /// Sigmoid applied to real and imaginary parts independently.
    pub fn csigmoid_split(&mut self, a: CVar) -> CVar {
        CVar { re: self.sigmoid(a.re), im: self.sigmoid(a.im) }
    }

    /// Tanh applied to real and imaginary parts independently.
    pub fn ctanh_split(&mut self, a: CVar) -> CVar {
        CVar { re: self.tanh(a.re), im: self.tanh(a.im) }
    }

    /// `1 - a` for complex `a`.
    pub fn cone_minus(&mut self, a: CVar) -> CVar {
        CVar { re: self.one_minus(a.re), im: self.neg(a.im) }
    }

    pub fn cslice_cols(&mut self, a: CVar, start: usize, end: usize) -> CVar {
        CVar { re: self.slice_cols(a.re, start, end), im: self.slice_cols(a.im, start, end) }
    }

    pub fn cslice(&mut self, a: CVar, start: usize, end: usize) -> CVar {
        CVar { re: self.slice(a.re, start, end), im: self.slice(a.im, start, end) }
    }

    pub fn cconcat(&mut self, parts: &[CVar]) -> CVar {
        let re: Vec<Var> = parts.iter().map(|p| p.re).collect();
        let im: Vec<Var> = parts.iter().map(|p| p.im).collect();
        CVar { re: self.concat(&re), im: self.concat(&im) }
    }

    pub fn cgather(&mut self, a: CVar, index: Arc<[usize]>, rows: usize, cols: usize) -> CVar {
        CVar {
            re: self.gather(a.re, index.clone(), rows, cols),
            im: self.gather(a.im, index, rows, cols),
        }
    }

    pub fn cindex_add(&mut self, a: CVar, index: Arc<[usize]>, rows: usize, cols: usize) -> CVar {
        CVar {
            re: self.index_add(a.re, index.clone(), rows, cols),
            im: self.index_add(a.im, index, rows, cols),
        }
    }

    pub fn ccompress(&mut self, a: CVar) -> CVar {
        let (re, im) = self.compress(a.re, a.im);
        CVar { re, im }
    }

    pub fn crfft(&mut self, x: Var, fft: &Arc<RealFft>) -> CVar {
        let (re, im) = self.rfft(x, fft);
        CVar { re, im }
    }

    pub fn cirfft(&mut self, z: CVar, fft: &Arc<RealFft>) -> Var {
        self.irfft(z.re, z.im, fft)
    }

    /// `sum |a|^2` as a real scalar.
    pub fn cnorm_sqr_sum(&mut self, a: CVar) -> Var {
        let r = self.square(a.re);
        let i = self.square(a.im);
        let s = self.add(r, i);
        self.sum(s)
    }
}
