//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error between an analytic and a numeric gradient, measured over
/// whole tensors: `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`. The floor keeps
/// identically-zero gradients from amplifying rounding noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates `f` on fresh tapes with `inputs` as gradient-requiring leaves
/// and compares the tape's gradients with central differences of step
/// `step`.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut estimate = vec![0.0; input.numel()];
        for (i, slot) in estimate.iter_mut().enumerate() {
            let mut probe = inputs.to_vec();
            probe[k].data_mut()[i] += step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] -= 2.0 * step;
            let minus = eval(&probe)?;
            *slot = (plus - minus) / (2.0 * step);
        }
        numeric.push(Tensor::from_vec(input.shape(), estimate));
    }

    let errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect();
    Ok(GradCheckReport {
        analytic,
        numeric,
        errors,
    })
}
