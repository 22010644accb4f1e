use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, Result};

/// Splits `x` into blocks of `window` samples advanced by `hop`.
///
/// Block `t` covers `[t * hop, t * hop + window)`; samples past the end are
/// zero. The block count is `ceil(len / hop)`.
pub fn frame_signal(x: &[f64], window: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    let count = frame_count(x.len(), window, hop)?;
    Ok((0..count)
        .map(|t| {
            let mut block = vec![0.0; window];
            let start = t * hop;
            let end = (start + window).min(x.len());
            block[..end - start].copy_from_slice(&x[start..end]);
            block
        })
        .collect())
}

/// Number of blocks [`frame_signal`] produces for a signal of `len` samples.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Result<usize> {
    if window == 0 || hop == 0 || hop > window {
        return Err(config!("invalid framing: window {window}, hop {hop}"));
    }
    Ok(len.div_ceil(hop))
}
