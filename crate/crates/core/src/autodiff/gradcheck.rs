use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar graph against central differences.
///
/// `build` receives one leaf per entry of `points` and must return a scalar node.
/// The result is the maximum over all coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(build: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = gradients(&build, points)?;
    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = points.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..points[p].len() {
            let orig = points[p].data()[i];
            probe[p].data_mut()[i] = orig + step;
            let up = evaluate(&build, &probe)?;
            probe[p].data_mut()[i] = orig - step;
            let down = evaluate(&build, &probe)?;
            probe[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Forward value of `build` at `points`.
pub fn evaluate<F>(build: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::NotScalar { shape: value.shape().to_vec() });
    }
    Ok(value.data()[0])
}

/// Reverse-mode gradients of `build` with respect to each entry of `points`.
pub fn gradients<F>(build: &F, points: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(points)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}
