//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used on the numeric side, so these checks
//! are independent of every adjoint implemented in [`crate::tensor`].

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Step used by the engine's own gradient tests.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`.
///
/// When both vectors are numerically zero (norm below `1e-12`) the absolute
/// difference is returned instead.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function with respect to every element
/// of every input.
pub fn numeric_gradient<F>(inputs: &[Tensor], step: f64, mut f: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = f(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = f(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Fixed, non-degenerate weights used to reduce a tensor output to a scalar.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + (i as f64 * 0.7137 + 0.31).sin()).collect()
}

fn reduce(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = g.input(Tensor::new(shape.clone(), probe_weights(shape.iter().product()))?);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

/// Compare the engine's gradients of `f` against central differences.
///
/// Every input becomes a tracked leaf. A non-scalar output is reduced with
/// fixed probe weights. Returns one relative error per input.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_with_step(inputs, DEFAULT_STEP, f)
}

pub fn check_with_step<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = reduce(&mut g, out)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let numeric = numeric_gradient(inputs, step, |xs| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = reduce(&mut g, out)?;
        Ok(g.value(loss).item())
    })?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect())
}

/// Directional-derivative check for functions with many inputs:
/// compares `<grad, d>` with `(f(x + h d) - f(x - h d)) / 2h` for a
/// direction `d`.
pub fn directional_error<F>(inputs: &[Tensor], grads: &[Tensor], direction: &[Tensor], step: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if inputs.len() != grads.len() || inputs.len() != direction.len() {
        return Err(Error::Usage("directional check needs matching input, grad and direction lists".into()));
    }
    let shifted = |sign: f64| -> Vec<Tensor> {
        inputs
            .iter()
            .zip(direction)
            .map(|(x, d)| {
                Tensor::new(
                    x.shape().to_vec(),
                    x.data().iter().zip(d.data()).map(|(a, b)| a + sign * step * b).collect(),
                )
                .expect("same shape")
            })
            .collect()
    };
    let plus = f(&shifted(1.0))?;
    let minus = f(&shifted(-1.0))?;
    let numeric = (plus - minus) / (2.0 * step);
    let analytic: f64 = grads
        .iter()
        .zip(direction)
        .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(relative_error(&[analytic], &[numeric]))
}
