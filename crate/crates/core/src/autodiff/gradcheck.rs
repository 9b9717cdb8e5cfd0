//! Central finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over all checked coordinates of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_relative_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the tape gradient of `build` against central differences with
/// step `epsilon`, for every element of every tensor in `inputs`.
///
/// `build` receives the graph and one leaf per input and returns the output
/// node; non-scalar outputs are reduced by summation.
pub fn grad_check<B>(inputs: &[Tensor<f64>], build: B, epsilon: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let eval = |tensors: &[Tensor<f64>], trainable: bool| -> Result<(Graph<f64>, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect();
        let out = build(&mut g, &leaves)?;
        let out = if g.value(out).len() == 1 {
            out
        } else {
            g.sum(out)
        };
        Ok((g, out, leaves))
    };

    let (g, out, leaves) = eval(inputs, true)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(&g, *leaf);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + epsilon;
            let (gp, op, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig - epsilon;
            let (gm, om, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * epsilon);
            let a = analytic.data()[j];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {i} element {j}: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
