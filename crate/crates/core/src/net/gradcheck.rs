//! Central finite-difference check of tape gradients.
//!
//! The numeric side evaluates the loss through the plain inference path, so
//! the comparison also cross-checks the two forward implementations.

use serde::{Deserialize, Serialize};

use super::model::NeuralModel;
use super::params::ParamId;
use super::train::{batch_gradients, dataset_nll, Example};

/// Denominator floor for relative errors, so entries whose true gradient is
/// essentially zero are judged on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares gradients of the summed NLL over `data` against central
/// differences with step `h` for every parameter entry.
pub fn gradient_check(model: &NeuralModel, data: &[Example], h: f64) -> GradCheckReport {
    let batch: Vec<&Example> = data.iter().collect();
    let (_, _, grads) = batch_gradients(model, &batch, 0.0, 0);
    let loss = |m: &NeuralModel| dataset_nll(m, data).expect("terminated targets").0;

    let mut report = GradCheckReport {
        parameters: model.backbone().params().num_values(),
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
    };
    let mut probe = model.clone();
    for (ti, tensor) in model.backbone().params().tensors().iter().enumerate() {
        for j in 0..tensor.data.len() {
            let orig = tensor.data[j];
            let set = |m: &mut NeuralModel, v: f64| {
                m.backbone_mut().params_mut().get_mut(ParamId(ti)).data[j] = v;
            };
            set(&mut probe, orig + h);
            let up = loss(&probe);
            set(&mut probe, orig - h);
            let down = loss(&probe);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads.tensors[ti][j], numeric);
            if err > report.max_relative_error || report.worst_tensor.is_empty() {
                report.max_relative_error = err;
                report.worst_tensor = tensor.name.clone();
                report.worst_index = j;
            }
        }
    }
    report
}
