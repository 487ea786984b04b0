//! Central finite-difference gradient checking.

use super::Params;

/// Entries whose gradients are this small relative to the largest entry
/// are compared on an absolute scale; finite-difference noise is absolute.
const RELATIVE_FLOOR: f64 = 1e-3;

/// Worst relative error between `analytic` and central differences of
/// `loss` over every parameter of `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, h: f64, loss: F) -> f64
where
    P: Params,
    F: Fn(&P) -> f64,
{
    let numeric = numeric_gradient(params, h, loss);
    max_relative_error(&analytic.flatten(), &numeric)
}

/// Central-difference gradient, flattened in [`Params::tensors`] order.
pub fn numeric_gradient<P, F>(params: &P, h: f64, loss: F) -> Vec<f64>
where
    P: Params,
    F: Fn(&P) -> f64,
{
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(shapes.iter().sum());
    for (ti, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + h;
            let plus = loss(&probe);
            probe.tensors_mut()[ti][j] = orig - h;
            let minus = loss(&probe);
            probe.tensors_mut()[ti][j] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    out
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
