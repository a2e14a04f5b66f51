use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::params::ParamVector;
use crate::error::{contract, Error, Result};

/// Scalar function built on a graph from one leaf per parameter segment.
pub type GraphFn<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn evaluate(f: &GraphFn, point: &ParamVector, trainable: bool) -> Result<(Graph, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let leaves = point
        .segments()
        .iter()
        .map(|s| {
            if trainable {
                g.param(s.value.clone())
            } else {
                g.constant(s.value.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut g, &leaves)?;
    let value = g.forward(root)?;
    if value.len() != 1 {
        return Err(contract!("gradient check needs a scalar function"));
    }
    if !value.data()[0].is_finite() {
        return Err(Error::NumericFailure { op: "check_gradients" });
    }
    Ok((g, leaves, root))
}

fn scalar_at(f: &GraphFn, point: &ParamVector) -> Result<f64> {
    let (g, _, root) = evaluate(f, point, false)?;
    Ok(g.value(root).data()[0])
}

/// Max over all coordinates of `|analytic - central| / max(1, |central|)`.
pub fn check_gradients(f: &GraphFn, point: &ParamVector, step: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..point.len()).collect();
    check_gradients_at(f, point, step, &coords)
}

/// As [`check_gradients`], restricted to the given flat coordinates.
pub fn check_gradients_at(f: &GraphFn, point: &ParamVector, step: f64, coords: &[usize]) -> Result<f64> {
    if !(step > 0.0) {
        return Err(contract!("finite-difference step must be positive"));
    }
    let (g, leaves, root) = evaluate(f, point, true)?;
    let grads = g.backward(root)?;
    let mut analytic = Vec::with_capacity(point.len());
    for &leaf in &leaves {
        analytic.extend_from_slice(grads.get(leaf).expect("trainable leaf").data());
    }
    let base = point.flatten();
    let mut worst: f64 = 0.0;
    for &i in coords {
        if i >= base.len() {
            return Err(contract!("probe coordinate {} out of range", i));
        }
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let fp = scalar_at(f, &point.unflatten(&plus)?)?;
        let fm = scalar_at(f, &point.unflatten(&minus)?)?;
        let central = (fp - fm) / (2.0 * step);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
