//! Classification and cancellation metrics.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, Result};

/// Counts indexed `[reference][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(usage!("{} counts for {classes} classes", counts.len()));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, reference: usize, predicted: usize) -> Result<()> {
        if reference >= self.classes || predicted >= self.classes {
            return Err(usage!("label pair ({reference}, {predicted}) outside {} classes", self.classes));
        }
        self.counts[reference * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class F1 (0 when precision + recall is 0).
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let pred: u64 = (0..self.classes).map(|r| self.get(r, c)).sum();
                let refs: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let precision = if pred > 0 { tp / pred as f64 } else { 0.0 };
                let recall = if refs > 0 { tp / refs as f64 } else { 0.0 };
                if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `(macro, micro)` F1. The macro mean runs over classes present in the
    /// reference; the micro score pools counts and equals accuracy.
    pub fn f1_scores(&self) -> Result<(f64, f64)> {
        let total = self.total();
        if total == 0 {
            return Err(usage!("F1 of an empty confusion matrix"));
        }
        let f1 = self.per_class_f1();
        let present: Vec<usize> = (0..self.classes).filter(|&c| (0..self.classes).any(|p| self.get(c, p) > 0)).collect();
        let macro_f1 = present.iter().map(|&c| f1[c]).sum::<f64>() / present.len() as f64;
        let correct: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok((macro_f1, correct as f64 / total as f64))
    }
}

/// `10 log10(|d|^2 / |e|^2)` over the masked samples; `None` when the mask
/// selects nothing or the masked mixture is silent.
pub fn erle_db(d: &[f64], e: &[f64], mask: &[bool]) -> Option<f64> {
    let (mut pd, mut pe) = (0.0, 0.0);
    let mut any = false;
    for ((&dv, &ev), &m) in d.iter().zip(e).zip(mask) {
        if m {
            any = true;
            pd += dv * dv;
            pe += ev * ev;
        }
    }
    if !any || pd <= 0.0 {
        return None;
    }
    Some(10.0 * (pd / pe.max(f64::MIN_POSITIVE)).log10())
}

/// Two-sided paired permutation test on per-scene correctness. Sign flips of
/// the per-scene differences are enumerated exhaustively when `2^n <= trials`
/// and sampled otherwise, giving `p = (hits + 1) / (trials + 1)`.
pub fn paired_permutation_test(a: &[bool], b: &[bool], trials: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(usage!("paired test needs equal scene sets ({} vs {})", a.len(), b.len()));
    }
    let diffs: Vec<i64> = a.iter().zip(b).map(|(&x, &y)| x as i64 - y as i64).filter(|&d| d != 0).collect();
    let observed = diffs.iter().sum::<i64>().abs();
    let n = diffs.len();
    if n == 0 {
        return Ok(1.0);
    }
    if n < 63 && (1u64 << n) <= trials as u64 {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let s: i64 = diffs.iter().enumerate().map(|(i, &d)| if mask >> i & 1 == 1 { -d } else { d }).sum();
                s.abs() >= observed
            })
            .count();
        return Ok(hits as f64 / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..trials)
        .filter(|_| {
            let s: i64 = diffs.iter().map(|&d| if rng.gen::<bool>() { -d } else { d }).sum();
            s.abs() >= observed
        })
        .count();
    Ok((hits + 1) as f64 / (trials + 1) as f64)
}
