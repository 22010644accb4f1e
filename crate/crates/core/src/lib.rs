//! Classification-trained meta-adaptive filtering.
//!
//! A frequency-domain echo canceller whose update rule is a learned recurrent
//! network, trained end to end against a downstream keyword classifier.
//! Everything here is pure computation over `alloc`; file formats, audio IO
//! and the command line live in the `metaaf` crate.

#![cfg_attr(not(test), no_std)]
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;

pub mod adam;
pub mod aec;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod exec;
pub mod kalman;
pub mod kws;
pub mod loss;
pub mod meta;
pub mod metrics;
pub mod optimizer;
pub mod params;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
