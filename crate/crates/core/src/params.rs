//! Named parameter collections shared by the models, the trainer and checkpoints.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{CVar, Gradients, Tape, Var};
use crate::error::{usage, Result};
use crate::C64;

/// A dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Real,
    Complex,
}

/// One named array. Complex data is stored as all real parts followed by
/// all imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dtype: Dtype,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn real(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { name: name.to_string(), dtype: Dtype::Real, rows, cols, data }
    }

    pub fn complex(name: &str, rows: usize, cols: usize, values: &[C64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let mut data: Vec<f64> = values.iter().map(|z| z.re).collect();
        data.extend(values.iter().map(|z| z.im));
        Self { name: name.to_string(), dtype: Dtype::Complex, rows, cols, data }
    }

    /// Number of scalar entries (complex entries count once).
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn complex_values(&self) -> Vec<C64> {
        assert_eq!(self.dtype, Dtype::Complex);
        let n = self.numel();
        (0..n).map(|i| C64::new(self.data[i], self.data[n + i])).collect()
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Handles of a [`ParamSet`] registered on a tape, in set order.
#[derive(Debug, Clone)]
pub struct TapeParams {
    handles: Vec<Handle>,
}

#[derive(Debug, Clone, Copy)]
pub enum Handle {
    Real(Var),
    Complex(CVar),
}

impl TapeParams {
    /// Handles for leaves created from [`ParamSet::tensors`], paired back
    /// into complex parameters where `layout` has them.
    pub fn from_tensor_vars(layout: &ParamSet, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let handles = layout
            .params
            .iter()
            .map(|p| {
                let re = it.next().expect("one leaf per tensor");
                match p.dtype {
                    Dtype::Real => Handle::Real(re),
                    Dtype::Complex => Handle::Complex(CVar { re, im: it.next().expect("imaginary leaf") }),
                }
            })
            .collect();
        Self { handles }
    }

    /// Handles for a list of real leaves.
    pub fn from_vars(vars: &[Var]) -> Self {
        Self { handles: vars.iter().map(|&v| Handle::Real(v)).collect() }
    }

    pub fn real(&self, i: usize) -> Var {
        match self.handles[i] {
            Handle::Real(v) => v,
            Handle::Complex(_) => panic!("parameter {i} is complex"),
        }
    }

    pub fn complex(&self, i: usize) -> CVar {
        match self.handles[i] {
            Handle::Complex(v) => v,
            Handle::Real(_) => panic!("parameter {i} is real"),
        }
    }

    /// Collects adjoints into a flat vector laid out like [`ParamSet::flat`].
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.handles {
            match *h {
                Handle::Real(v) => out.extend(grads.get(v)),
                Handle::Complex(z) => {
                    out.extend(grads.get(z.re));
                    out.extend(grads.get(z.im));
                }
            }
        }
        out
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Param) {
        assert!(self.get(&p.name).is_none(), "duplicate parameter {}", p.name);
        self.params.push(p);
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Count of real entries plus complex entries (each complex value once).
    pub fn count(&self, dtype: Dtype) -> usize {
        self.params.iter().filter(|p| p.dtype == dtype).map(Param::numel).sum()
    }

    /// Total number of stored reals (complex entries count twice).
    pub fn flat_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(usage!("flat length {} != {}", flat.len(), self.flat_len()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Checks that `other` has the same names, dtypes and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(usage!(
                "parameter count {} != {}",
                self.params.len(),
                other.params.len()
            ));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.dtype != b.dtype || a.rows != b.rows || a.cols != b.cols {
                return Err(usage!(
                    "parameter mismatch: {} {:?} {}x{} vs {} {:?} {}x{}",
                    a.name, a.dtype, a.rows, a.cols, b.name, b.dtype, b.rows, b.cols
                ));
            }
        }
        Ok(())
    }

    /// Every parameter as real tensors; complex ones split into real and imaginary parts.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for p in &self.params {
            let n = p.numel();
            out.push(Tensor::new(p.rows, p.cols, p.data[..n].to_vec()));
            if p.dtype == Dtype::Complex {
                out.push(Tensor::new(p.rows, p.cols, p.data[n..].to_vec()));
            }
        }
        out
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> TapeParams {
        let handles = self
            .params
            .iter()
            .map(|p| match p.dtype {
                Dtype::Real => Handle::Real(tape.leaf(p.data.clone(), p.rows, p.cols)),
                Dtype::Complex => {
                    let n = p.numel();
                    let re = tape.leaf(p.data[..n].to_vec(), p.rows, p.cols);
                    let im = tape.leaf(p.data[n..].to_vec(), p.rows, p.cols);
                    Handle::Complex(CVar { re, im })
                }
            })
            .collect();
        TapeParams { handles }
    }
}

/// Glorot-style initializer: real entries with variance `2 / (fan_in + fan_out)`,
/// complex entries with independent parts of variance `1 / (fan_in + fan_out)`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, dtype: Dtype, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let fan_sum = (fan_in + fan_out) as f64;
    let var = match dtype {
        Dtype::Real => 2.0 / fan_sum,
        Dtype::Complex => 1.0 / fan_sum,
    };
    let normal = Normal::new(0.0, num_traits::Float::sqrt(var)).expect("finite variance");
    let count = match dtype {
        Dtype::Real => n,
        Dtype::Complex => 2 * n,
    };
    (0..count).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_and_counts() {
        let mut ps = ParamSet::new();
        ps.push(Param::real("a", 2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        ps.push(Param::complex("b", 1, 2, &[C64::new(5.0, 6.0), C64::new(7.0, 8.0)]));
        assert_eq!(ps.count(Dtype::Real), 4);
        assert_eq!(ps.count(Dtype::Complex), 2);
        assert_eq!(ps.flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 6.0, 8.0]);
        let mut other = ps.clone();
        other.set_flat(&[0.0; 8]).unwrap();
        assert!(other.check_compatible(&ps).is_ok());
        assert!(other.set_flat(&[0.0; 7]).is_err());
        assert_eq!(ps.get("b").unwrap().complex_values()[1], C64::new(7.0, 8.0));
    }
}
