//! Central finite-difference verification of analytic gradients.

use super::{Element, Graph, Precision, Tensor, Var};
use crate::error::{bail, Result};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Step for checks through whole blocks and models. Round-off in `f` grows
/// with depth, and these functions are piecewise linear, so a wider step
/// loses nothing to truncation while keeping cancellation noise below 1e-5.
pub const COMPOSITE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / scale
}

pub fn require_double<T: Element>() -> Result<()> {
    if T::PRECISION != Precision::Double {
        bail!(
            Precision,
            "gradient checks need double precision; finite differences are meaningless in single"
        );
    }
    Ok(())
}

/// Compares `analytic` against `(f(x+h) - f(x-h)) / 2h` for every coordinate.
///
/// `eval_at(input, coord, offset)` must return `f` with that single
/// coordinate shifted by `offset`, leaving the point unchanged afterwards.
pub fn compare_with_differences(
    analytic: &[Vec<f64>],
    h: f64,
    mut eval_at: impl FnMut(usize, usize, f64) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        coordinates: 0,
    };
    for (input, grads) in analytic.iter().enumerate() {
        for (coord, &a) in grads.iter().enumerate() {
            let plus = eval_at(input, coord, h)?;
            let minus = eval_at(input, coord, -h)?;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((input, coord));
                report.worst_pair = (a, numeric);
            }
        }
    }
    Ok(report)
}

/// Checks the gradient of the scalar function `f` at `inputs`.
///
/// `f` receives a fresh graph and one leaf per input, and must return a
/// scalar node. Any randomness inside `f` has to be re-seeded per call.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], h: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    require_double::<T>()?;
    let mut graph = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let out = f(&mut graph, &leaves)?;
    graph.backward(out)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match graph.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut point: Vec<Tensor<T>> = inputs.to_vec();
    compare_with_differences(&analytic, h, |input, coord, offset| {
        let original = point[input].data()[coord];
        point[input].data_mut()[coord] = T::from_f64(original.as_f64() + offset);
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
        let value = f(&mut g, &vars).map(|v| g.value(v).data()[0].as_f64());
        point[input].data_mut()[coord] = original;
        value
    })
}
