use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{evaluate_response_map, ResponseMap, StructuralModel};
use crate::ukf::EstimateTrace;

/// `100 · ‖estimate − truth‖₂ / ‖truth‖₂`.
pub fn rms_error_percent(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} samples, truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth signal".into()));
    }
    let den = truth.iter().map(|t| t * t).sum::<f64>();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>();
    Ok(100.0 * (num / den).sqrt())
}

/// Elementwise `estimate / truth`.
pub fn parameter_ratio_table(estimates: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} true parameters",
            estimates.len(),
            truth.len()
        )));
    }
    estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            if *t == 0.0 {
                Err(Error::ZeroReference)
            } else {
                Ok(e / t)
            }
        })
        .collect()
}

/// Strain history of one map along a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainTrace {
    pub map: ResponseMap,
    pub values: Vec<f64>,
}

/// Applies every strain map of the model to each posterior mean.
pub fn estimate_strains_from_states(trace: &EstimateTrace, model: &StructuralModel) -> Result<Vec<StrainTrace>> {
    let maps = model.strain_maps()?;
    let range = trace.layout.structural();
    let params = trace
        .final_system_parameters()
        .unwrap_or_else(|| model.system().nominal_parameters().clone());
    maps.into_iter()
        .map(|map| {
            let values = trace
                .means
                .iter()
                .map(|m| {
                    let state: DVector<f64> = m.rows_range(range.clone()).into_owned();
                    evaluate_response_map(model, &map, &state, params.as_slice(), 0.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(StrainTrace { map, values })
        })
        .collect()
}

/// Median of a non-empty list; NaN for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
