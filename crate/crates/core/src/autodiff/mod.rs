//! Reverse-mode differentiation over recorded tensor operations.
//!
//! A [`Tape`] records each operation in execution order; [`Tape::backward`]
//! sweeps it in reverse. Complex values are split into real and imaginary
//! nodes, so every adjoint is an ordinary real derivative and a descent step
//! on `(re, im)` needs no Wirtinger bookkeeping.
//!
//! ```
//! use metaaf_core::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.vector(vec![3.0]);
//! let y = tape.square(x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x), vec![6.0]);
//! ```

mod check;
mod complex;
mod tape;

pub use check::{check_gradients, relative_error, GradCheckReport};
pub use complex::CVar;
pub use tape::{Gradients, Tape, Unary, Var};
pub(crate) use tape::compress_gain;
