//! Central finite-difference gradient checks.

use crate::{Graph, Result, Tensor, Var};

/// Relative error used throughout: `|a − f| / max(1e-8, |a| + |f|)`, maximised
/// over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn finite_difference<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?;
        x[i] = orig - h;
        let minus = f(&x)?;
        x[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the tape gradient of `build` at `point` against central
/// differences with step `h`. `build` receives a graph and the leaf holding
/// the point and must return a scalar node.
pub fn grad_check<F>(build: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = build(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let shape = point.shape().to_vec();
    let numeric = finite_difference(
        |flat| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::new(shape.clone(), flat.to_vec())?);
            let y = build(&mut g, x)?;
            Ok(g.value(y).item())
        },
        point.data(),
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
