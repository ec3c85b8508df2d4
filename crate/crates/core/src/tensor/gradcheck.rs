//! Finite-difference verification of the backward pass.
//!
//! For sampled parameter elements, the analytic gradient is compared with a
//! central difference of the loss. The loss closure must be deterministic:
//! it is re-evaluated many times with perturbed parameters, so anything
//! stochastic (dropout, sampling) has to be disabled or frozen first.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::{ParamStore, Tensor, TensorError};

/// Step size used for central differences.
pub const FD_EPSILON: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative, guarded for
/// values near zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Number of parameter elements compared.
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat element index of the worst comparison.
    pub worst: Option<(String, usize)>,
    /// Per-parameter worst relative error.
    pub per_param: BTreeMap<String, f64>,
}

/// Compares analytic gradients against central finite differences on up to
/// `samples_per_param` elements of every parameter in the store.
pub fn gradient_check<F, R>(
    store: &mut ParamStore,
    mut loss_fn: F,
    samples_per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&ParamStore) -> Result<Tensor, TensorError>,
    R: Rng + ?Sized,
{
    let loss = loss_fn(store)?;
    if !loss.is_scalar() {
        return Err(TensorError::NonScalarRoot {
            shape: loss.shape().to_vec(),
        });
    }
    let grads = loss.backward()?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut analytic: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for name in &names {
        let tensor = store.get(name).unwrap();
        let g = grads
            .get(&tensor)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tensor.values().len()]);
        analytic.insert(name.clone(), g);
    }

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        per_param: BTreeMap::new(),
    };
    for name in &names {
        let len = store.values(name).unwrap().len();
        let mut indices: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            rand::seq::index::sample(rng, len, samples_per_param).into_vec()
        };
        indices.sort_unstable();
        let mut param_worst = 0.0f64;
        for idx in indices {
            store.nudge(name, idx, FD_EPSILON)?;
            let plus = loss_fn(store)?.item();
            store.nudge(name, idx, -2.0 * FD_EPSILON)?;
            let minus = loss_fn(store)?.item();
            store.nudge(name, idx, FD_EPSILON)?;
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            let err = rel_error(analytic[name][idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
            }
            param_worst = param_worst.max(err);
        }
        report.per_param.insert(name.clone(), param_worst);
    }
    Ok(report)
}
