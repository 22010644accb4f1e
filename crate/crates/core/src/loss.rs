//! Training objectives.

use alloc::vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{Tape, Var};
use crate::error::{usage, Result};

/// Floor inside the log of the meta-loss.
pub const META_LOSS_EPS: f64 = 1e-8;

/// `ln(mean(e^2) + eps)` over a residual window.
pub fn meta_loss(e: &[f64]) -> Result<f64> {
    if e.is_empty() {
        return Err(usage!("meta-loss needs a nonempty residual window"));
    }
    let mse = e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
    Ok((mse + META_LOSS_EPS).ln())
}

/// `lambda * classification + (1 - lambda) * meta`.
pub fn joint_loss(classification: f64, meta: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(if lambda == 0.0 {
        meta
    } else if lambda == 1.0 {
        classification
    } else {
        lambda * classification + (1.0 - lambda) * meta
    })
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(usage!("loss weight must lie in [0, 1], got {lambda}"));
    }
    Ok(())
}

/// Class-averaged binary cross-entropy of a probability vector against a one-hot target.
pub fn kws_loss(probs: &[f64], class: usize) -> Result<f64> {
    if class >= probs.len() {
        return Err(usage!("class {class} out of range for {} classes", probs.len()));
    }
    let clamp = |p: f64| p.clamp(1e-12, 1.0 - 1e-12);
    let total: f64 = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == class { -clamp(p).ln() } else { -(1.0 - clamp(p)).ln() })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Meta-loss of a `1 x n` residual node.
pub fn meta_loss_on_tape(tape: &mut Tape, e: Var) -> Var {
    let sq = tape.square(e);
    let mse = tape.mean(sq);
    let shifted = tape.add_scalar(mse, META_LOSS_EPS);
    tape.ln(shifted)
}

/// Class-averaged BCE of a probability node.
pub fn kws_loss_on_tape(tape: &mut Tape, probs: Var, class: usize) -> Result<Var> {
    let n = tape.value(probs).len();
    if class >= n {
        return Err(usage!("class {class} out of range for {n} classes"));
    }
    let mut target = vec![0.0; n];
    target[class] = 1.0;
    Ok(tape.bce_mean(probs, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analytic_values() {
        assert!(meta_loss(&[1.0; 10]).unwrap().abs() < 1e-7);
        assert!(meta_loss(&[]).is_err());
        assert!((kws_loss(&[0.5, 0.5], 0).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(kws_loss(&[1.0, 0.0], 0).unwrap() < 1e-10);
        assert!(kws_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn joint_boundaries() {
        assert_eq!(joint_loss(3.0, -2.0, 0.0).unwrap(), -2.0);
        assert_eq!(joint_loss(3.0, -2.0, 1.0).unwrap(), 3.0);
        assert_eq!(joint_loss(3.0, -2.0, 0.5).unwrap(), 0.5);
        assert!(joint_loss(1.0, 1.0, 1.5).is_err());
        assert!(joint_loss(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn tape_versions_agree() {
        let e = [0.3, -1.2, 2.0, 0.01];
        let mut t = Tape::new();
        let v = t.vector(e.to_vec());
        let l = meta_loss_on_tape(&mut t, v);
        assert!((t.scalar(l) - meta_loss(&e).unwrap()).abs() < 1e-14);
        let p = t.vector(vec![0.2, 0.5, 0.3]);
        let l = kws_loss_on_tape(&mut t, p, 1).unwrap();
        assert!((t.scalar(l) - kws_loss(&[0.2, 0.5, 0.3], 1).unwrap()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn scaling_adds_two_ln_alpha(e in prop::collection::vec(-3.0f64..3.0, 4..64), alpha in 0.1f64..10.0) {
            prop_assume!(e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64 > 1e-2);
            let scaled: alloc::vec::Vec<f64> = e.iter().map(|v| v * alpha).collect();
            let diff = meta_loss(&scaled).unwrap() - meta_loss(&e).unwrap();
            prop_assert!((diff - 2.0 * alpha.ln()).abs() < 1e-5);
        }

        #[test]
        fn joint_is_linear_in_lambda(c in -5.0f64..5.0, m in -5.0f64..5.0, lambda in 0.0f64..=1.0) {
            let j = joint_loss(c, m, lambda).unwrap();
            prop_assert!((j - (m + lambda * (c - m))).abs() < 1e-12);
        }

        #[test]
        fn bce_matches_direct_formula(raw in prop::collection::vec(0.01f64..1.0, 2..8), class in 0usize..8) {
            let s: f64 = raw.iter().sum();
            let p: alloc::vec::Vec<f64> = raw.iter().map(|v| v / s).collect();
            let c = class % p.len();
            let mut direct = 0.0;
            for (j, &pj) in p.iter().enumerate() {
                let t = if j == c { 1.0 } else { 0.0 };
                direct -= t * pj.ln() + (1.0 - t) * (1.0 - pj).ln();
            }
            direct /= p.len() as f64;
            prop_assert!((kws_loss(&p, c).unwrap() - direct).abs() < 1e-10);
        }
    }
}
