use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds on one augmented-state entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub fn lower(index: usize, lower: f64) -> Self {
        Self {
            index,
            lower,
            upper: f64::INFINITY,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.index >= dim {
            return Err(Error::invalid(
                "constraints.index",
                format!("{} out of range for a state of size {dim}", self.index),
            ));
        }
        if self.lower.is_nan() || self.upper.is_nan() || self.lower > self.upper {
            return Err(Error::invalid(
                "constraints",
                format!(
                    "entry {}: lower {} exceeds upper {}",
                    self.index, self.lower, self.upper
                ),
            ));
        }
        Ok(())
    }
}

/// Result of the constrained gain computation.
#[derive(Clone, Debug)]
pub struct ConstrainedGain {
    pub gain: DMatrix<f64>,
    /// Entries held at a bound, with the bound value.
    pub active: Vec<(usize, f64)>,
}

impl ConstrainedGain {
    pub fn is_modified(&self) -> bool {
        !self.active.is_empty()
    }
}

/// Gain minimizing the trace of `P - K Pxyᵀ - Pxy Kᵀ + K S Kᵀ` subject to
/// every bounded entry of `mean + K·innovation` lying within its bounds.
///
/// The objective separates by gain row, so each violated row is the
/// unconstrained row projected onto its binding bound in the `S⁻¹` metric;
/// the remaining rows keep the unconstrained optimum.
pub fn cgukf_gain(
    cross_covariance: &DMatrix<f64>,
    innovation_covariance: &DMatrix<f64>,
    predicted_mean: &DVector<f64>,
    innovation: &DVector<f64>,
    constraints: &[Bound],
) -> Result<ConstrainedGain> {
    let m = innovation.len();
    if innovation_covariance.shape() != (m, m) || cross_covariance.shape() != (predicted_mean.len(), m) {
        return Err(Error::DimensionMismatch(format!(
            "cross covariance {:?}, innovation covariance {:?}, innovation {m}",
            cross_covariance.shape(),
            innovation_covariance.shape()
        )));
    }
    let chol = innovation_covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    // K = Pxy S⁻¹ computed as (S⁻¹ Pxyᵀ)ᵀ
    let gain = chol.solve(&cross_covariance.transpose()).transpose();
    constrain_gain(gain, &chol.solve(innovation), predicted_mean, innovation, constraints)
}

pub(crate) fn constrain_gain(
    mut gain: DMatrix<f64>,
    s_inv_innovation: &DVector<f64>,
    predicted_mean: &DVector<f64>,
    innovation: &DVector<f64>,
    constraints: &[Bound],
) -> Result<ConstrainedGain> {
    let mut active = Vec::new();
    if constraints.is_empty() {
        return Ok(ConstrainedGain { gain, active });
    }
    let metric = innovation.dot(s_inv_innovation);
    for b in constraints {
        b.validate(predicted_mean.len())?;
        let j = b.index;
        let prior = predicted_mean[j];
        let step = gain.row(j).dot(&innovation.transpose());
        let target = prior + step;
        let bound = if target < b.lower {
            b.lower
        } else if target > b.upper {
            b.upper
        } else {
            continue;
        };
        if !(metric > f64::EPSILON * innovation.norm_squared().max(f64::MIN_POSITIVE)) {
            return Err(Error::InfeasibleConstraint {
                index: j,
                value: prior,
                lower: b.lower,
                upper: b.upper,
            });
        }
        let excess = step - (bound - prior);
        let correction = s_inv_innovation.transpose() * (excess / metric);
        let mut row = gain.row_mut(j);
        row -= correction;
        active.push((j, bound));
    }
    Ok(ConstrainedGain { gain, active })
}
