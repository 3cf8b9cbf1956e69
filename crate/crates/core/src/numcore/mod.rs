//! Numerical substrate: dense tensors, counter-based randomness and
//! reverse-mode gradients checked against central finite differences.

mod attention;
mod rng;
mod tape;
mod tensor;

pub use attention::{attention_forward, AttnShape};
pub use rng::{gauss_sample, RngStream};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Evaluates a scalar function recorded on a fresh tape and returns its value
/// together with the gradient for every input.
pub fn evaluate_with_gradients<F>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = f(&tape, &vars);
    if out.with_value(|t| t.len()) != 1 {
        return Err(Error::Contract(format!("function output has shape {:?}, expected a scalar", out.shape())));
    }
    tape.check_finite()?;
    let value = out.with_value(|t| t.item());
    let grads = tape.backward(out)?;
    let gradients = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    Ok((value, gradients))
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_difference_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Result<Tensor> {
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

/// Gradient agreement rule: relative error at most `rel`, or absolute error
/// at most `abs` when the reference magnitude is below `small`.
pub fn gradients_agree(analytic: f64, numeric: f64, rel: f64, abs: f64, small: f64) -> bool {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < small {
        diff <= abs
    } else {
        diff <= rel * scale
    }
}
