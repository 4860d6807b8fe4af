//! Central finite-difference gradient checking.
//!
//! Used by test suites to validate every backward rule against the forward
//! path alone. The relative error for one coordinate is
//! `|analytic − numeric| / max(1, |analytic| + |numeric|)`.

use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Builds a scalar loss from graph inputs. Called repeatedly on perturbed
/// copies of the same inputs, so it must be deterministic.
pub trait LossBuilder: Fn(&mut Graph, &[TensorId]) -> Result<TensorId> {}
impl<F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>> LossBuilder for F {}

fn eval<F: LossBuilder>(inputs: &[Tensor], build: &F) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.value(loss).item()
}

fn analytic_grads<F: LossBuilder>(inputs: &[Tensor], build: &F) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_grad()))
        .collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    Ok(ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| g.grad(*id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, analytic.abs() + numeric.abs())
}

/// Max relative error over every coordinate of every input.
pub fn max_rel_err<F: LossBuilder>(inputs: &[Tensor], build: &F, h: f64) -> Result<f64> {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k)))
        .collect();
    max_rel_err_at(inputs, build, &coords, h)
}

/// Max relative error over a chosen subset of `(input index, element index)`
/// coordinates; the cheap path for end-to-end checks on larger models.
pub fn max_rel_err_at<F: LossBuilder>(
    inputs: &[Tensor],
    build: &F,
    coords: &[(usize, usize)],
    h: f64,
) -> Result<f64> {
    let analytic = analytic_grads(inputs, build)?;
    let mut worst = 0.0_f64;
    for &(i, k) in coords {
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[k] += h;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[k] -= h;
        let numeric = (eval(&plus, build)? - eval(&minus, build)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i][k], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_correct_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap();
        let err = max_rel_err(
            &[x],
            &|g: &mut Graph, ids: &[TensorId]| {
                let sq = g.mul(ids[0], ids[0])?;
                g.sum_all(sq)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }
}
