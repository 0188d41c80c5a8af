//! Finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative error with a small absolute floor so that near-zero gradients
/// are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` with respect to every entry of every
/// input tensor.
pub fn central_difference(
    inputs: &[Tensor],
    step: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].data().len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + step;
            let plus = f(&work);
            work[k].data_mut()[e] = orig - step;
            let minus = f(&work);
            work[k].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Compares tape gradients of a scalar-valued graph against central
/// differences.
///
/// `build` records the computation on a fresh tape, given one trainable leaf
/// per input, and returns the 1x1 output.
pub struct GradCheck<F> {
    build: F,
    pub step: f64,
}

impl<F> GradCheck<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    pub fn new(build: F) -> Self {
        Self { build, step: 1e-5 }
    }

    pub fn eval(&self, inputs: &[Tensor]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    }

    pub fn analytic(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        tape.backward(out)?;
        Ok(vars.iter().map(|&v| tape.grad(v).unwrap().clone()).collect())
    }

    /// Worst relative error over all inputs.
    pub fn run(&self, inputs: &[Tensor]) -> Result<f64> {
        let analytic = self.analytic(inputs)?;
        let numeric = central_difference(inputs, self.step, |xs| {
            self.eval(xs).expect("forward failed during finite differencing")
        });
        Ok(analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| max_relative_error(a.data(), n.data()))
            .fold(0.0, f64::max))
    }
}
