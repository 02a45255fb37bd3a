//! Central finite-difference gradient checks in `f64`.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backprop gradients of a scalar loss against central differences.
///
/// `build` records a forward pass from the given tensors and returns the loss
/// along with the graph variable for each named tensor. At most
/// `per_tensor` entries of each tensor are probed (chosen by `seed`).
pub fn check<F>(
    tensors: &BTreeMap<String, Tensor<f64>>,
    step: f64,
    floor: f64,
    per_tensor: usize,
    seed: u64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &BTreeMap<String, Tensor<f64>>) -> Result<(Var, BTreeMap<String, Var>)>,
{
    let eval = |ts: &BTreeMap<String, Tensor<f64>>| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = build(&mut g, ts)?;
        Ok(g.value(loss).data()[0])
    };
    let mut g = Graph::new();
    let (loss, vars) = build(&mut g, tensors)?;
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = tensors.clone();
    for (name, t) in tensors {
        let Some(&var) = vars.get(name) else { continue };
        let analytic = grads.get(var);
        let idxs: Vec<usize> = if t.len() <= per_tensor {
            (0..t.len()).collect()
        } else {
            sample(&mut rng, t.len(), per_tensor).into_vec()
        };
        for i in idxs {
            let orig = t.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic.data()[i], numeric, floor);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
