//! The residual training objective: the distortion of every cumulative
//! reconstruction, averaged over iterations and then over sources.

use super::config::LossKind;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::codec::{CompressionTrace, SourceUnroll};
use crate::error::{Error, Result};

fn distortion(a: &[f32], b: &[f32], kind: LossKind) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            match kind {
                LossKind::Mse => d * d,
                LossKind::L1 => d.abs(),
            }
        })
        .sum();
    sum / a.len() as f64
}

/// `(1/T) * sum_t L(x1, recon_t)` for one source. `x1` must be the trace's
/// input batch in the coding domain.
pub fn iteration_loss(x1: &Tensor<f32>, trace: &CompressionTrace, kind: LossKind) -> Result<f64> {
    if trace.partial_recons.is_empty() {
        return Err(Error::InvalidArgument("trace holds no iterations".into()));
    }
    for (t, r) in trace.partial_recons.iter().enumerate() {
        if r.shape() != x1.shape() {
            return Err(Error::shape(
                "iteration_loss",
                format!(
                    "input batch is {:?} but reconstruction {} is {:?}",
                    x1.shape(),
                    t + 1,
                    r.shape()
                ),
            ));
        }
    }
    let total: f64 = trace
        .partial_recons
        .iter()
        .map(|r| distortion(x1.data(), r.data(), kind))
        .sum();
    Ok(total / trace.partial_recons.len() as f64)
}

/// Mean of [`iteration_loss`] over sources.
pub fn distributed_loss(
    batches: &[Tensor<f32>],
    traces: &[CompressionTrace],
    kind: LossKind,
) -> Result<f64> {
    if batches.is_empty() || batches.len() != traces.len() {
        return Err(Error::InvalidArgument(format!(
            "{} source batches for {} traces",
            batches.len(),
            traces.len()
        )));
    }
    let mut total = 0.0;
    for (x, tr) in batches.iter().zip(traces) {
        total += iteration_loss(x, tr, kind)?;
    }
    Ok(total / batches.len() as f64)
}

/// Graph form of [`iteration_loss`].
pub fn graph_iteration_loss<F: Scalar>(
    g: &mut Graph<F>,
    x1: Var,
    partials: &[Var],
    kind: LossKind,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in partials {
        let l = match kind {
            LossKind::Mse => g.mse(p, x1)?,
            LossKind::L1 => g.mae(p, x1)?,
        };
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total =
        total.ok_or_else(|| Error::InvalidArgument("no reconstructions to score".into()))?;
    Ok(g.scale(total, F::lit(1.0 / partials.len() as f64)))
}

/// Graph form of [`distributed_loss`] over unrolled sources.
pub fn graph_distributed_loss<F: Scalar>(
    g: &mut Graph<F>,
    sources: &[SourceUnroll],
    kind: LossKind,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for s in sources {
        let l = graph_iteration_loss(g, s.residuals[0], &s.partials, kind)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("no sources to score".into()))?;
    if sources.len() == 1 {
        return Ok(total);
    }
    Ok(g.scale(total, F::lit(1.0 / sources.len() as f64)))
}
