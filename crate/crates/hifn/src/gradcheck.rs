//! Central finite differences for verifying reverse-mode gradients.
//!
//! The numeric side only ever calls an opaque loss closure, so it stays
//! independent of the tape implementation it is used to check.

use crate::tensor::{GradStore, Params};

/// Numeric gradient of `loss` with respect to every value of parameter `name`,
/// by central differences with the given step.
pub fn numeric_gradient<F>(params: &mut Params, name: &str, step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&Params) -> f64,
{
    let n = params.by_name(name).expect("unknown parameter").numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let original = params.by_name(name).unwrap().data()[i];
        params.by_name_mut(name).unwrap().data_mut()[i] = original + step;
        let plus = loss(params);
        params.by_name_mut(name).unwrap().data_mut()[i] = original - step;
        let minus = loss(params);
        params.by_name_mut(name).unwrap().data_mut()[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Worst relative disagreement between two gradient vectors.
///
/// Entries where both magnitudes fall below `abs_floor` are ignored; otherwise
/// the error is `|a − n| / max(|a|, |n|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff < abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Outcome of checking one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Compares the accumulated reverse-mode gradients in `store` against central
/// finite differences of `loss`, parameter by parameter. Returns per-parameter
/// worst errors, sorted worst-first.
pub fn check_gradients<F>(
    params: &mut Params,
    store: &GradStore,
    step: f64,
    abs_floor: f64,
    mut loss: F,
) -> Vec<ParamCheck>
where
    F: FnMut(&Params) -> f64,
{
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut checks: Vec<ParamCheck> = names
        .into_iter()
        .map(|name| {
            let numeric = numeric_gradient(params, &name, step, &mut loss);
            let id = params.id(&name).unwrap();
            let analytic = store.get(id);
            ParamCheck {
                max_rel_error: max_relative_error(analytic, &numeric, abs_floor),
                name,
            }
        })
        .collect();
    checks.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error));
    checks
}
