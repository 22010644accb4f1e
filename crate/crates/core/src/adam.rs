//! Adam with global-norm clipping and a plateau learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{usage, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected step. A zero learning rate leaves `params` untouched
    /// but still advances the moments.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(usage!(
                "Adam sized for {} values, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            if lr != 0.0 {
                params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Halves the learning rate after `lr_patience` epochs without improvement and
/// requests a stop after `stop_patience`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub best: Option<f64>,
    /// Epochs since the best score.
    pub stale: usize,
    /// Epochs since the last improvement or learning-rate cut.
    pub since_cut: usize,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauOutcome {
    pub improved: bool,
    pub halve_lr: bool,
    pub stop: bool,
}

impl Plateau {
    pub fn new(lr_patience: usize, stop_patience: usize, higher_is_better: bool) -> Self {
        Self { lr_patience, stop_patience, best: None, stale: 0, since_cut: 0, higher_is_better }
    }

    pub fn observe(&mut self, score: f64) -> PlateauOutcome {
        let improved = match self.best {
            None => true,
            Some(b) => (self.higher_is_better && score > b) || (!self.higher_is_better && score < b),
        };
        if improved {
            self.best = Some(score);
            self.stale = 0;
            self.since_cut = 0;
        } else {
            self.stale += 1;
            self.since_cut += 1;
        }
        let halve_lr = self.since_cut >= self.lr_patience;
        if halve_lr {
            self.since_cut = 0;
        }
        PlateauOutcome { improved, halve_lr, stop: self.stale >= self.stop_patience }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut x, &g, 1e-2).unwrap();
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn zero_rate_freezes() {
        let mut x = vec![1.0, 2.0];
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        adam.step(&mut x, &[5.0, -5.0], 0.0).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert!(adam.step(&mut x, &[1.0], 0.1).is_err());
    }

    #[test]
    fn plateau_schedule() {
        let mut p = Plateau::new(2, 4, false);
        assert!(p.observe(1.0).improved);
        assert_eq!(p.observe(1.0), PlateauOutcome { improved: false, halve_lr: false, stop: false });
        assert_eq!(p.observe(2.0), PlateauOutcome { improved: false, halve_lr: true, stop: false });
        assert!(!p.observe(1.5).halve_lr);
        assert_eq!(p.observe(1.5), PlateauOutcome { improved: false, halve_lr: true, stop: true });
        assert!(p.observe(0.5).improved);
        assert_eq!(p.stale, 0);
    }

    proptest! {
        #[test]
        fn clipped_step_is_bounded(
            g in prop::collection::vec(-1e6f64..1e6, 1..40),
            lr in 1e-5f64..1e-1,
            steps in 1usize..20,
        ) {
            let n = g.len();
            let mut x = vec![0.0; n];
            let mut adam = Adam::new(n, 0.99, 0.999, 1e-8);
            for s in 0..steps {
                let mut grad: Vec<f64> = g.iter().map(|v| v * (1.0 + s as f64 * 0.1)).collect();
                prop_assert!(clip_global_norm(&mut grad, 10.0).is_finite());
                prop_assert!(grad.iter().map(|v| v * v).sum::<f64>().sqrt() <= 10.0 + 1e-9);
                let before = x.clone();
                adam.step(&mut x, &grad, lr).unwrap();
                // Cauchy-Schwarz on the moment sums: |m_hat| <= sqrt(v_hat) * sqrt(sum a_i^2 / b_i).
                let t = s + 1;
                let (c1, c2) = (1.0 - 0.99f64.powi(t as i32), 1.0 - 0.999f64.powi(t as i32));
                let k: f64 = (1..=t)
                    .map(|i| {
                        let a = 0.01 * 0.99f64.powi((t - i) as i32) / c1;
                        let b = 0.001 * 0.999f64.powi((t - i) as i32) / c2;
                        a * a / b
                    })
                    .sum::<f64>()
                    .sqrt();
                let step = x.iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(step <= lr * k * (n as f64).sqrt() * (1.0 + 1e-9));
            }
        }
    }
}
