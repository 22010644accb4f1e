use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::params::Tensor;

/// Relative errors below this magnitude are measured against it instead.
const SCALE_FLOOR: f64 = 1e-6;

/// Outcome of comparing adjoints against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tol)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(SCALE_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.data.clone(), p.rows, p.cols))
        .collect();
    let out = f(&mut tape, &vars);
    tape.scalar(out)
}

/// Compares the adjoints of `f` at `params` with central differences of step `eps`.
pub fn check_gradients<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.data.clone(), p.rows, p.cols))
        .collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss)?;

    let mut probe: Vec<Tensor> = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (pi, v) in vars.iter().enumerate() {
        let adjoint = grads.get(*v);
        let mut worst: f64 = 0.0;
        for i in 0..params[pi].data.len() {
            let orig = params[pi].data[i];
            probe[pi].data[i] = orig + eps;
            let up = evaluate(&f, &probe);
            probe[pi].data[i] = orig - eps;
            let down = evaluate(&f, &probe);
            probe[pi].data[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(adjoint[i], fd));
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tol })
}
