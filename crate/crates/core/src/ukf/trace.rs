use std::io::Write;

use nalgebra::DVector;

use super::{Algorithm, AugmentedState, FilterConfig, Innovation, StateLayout};
use crate::error::Result;
use crate::model::ParametricSystem;

/// Posterior means and variances after every event.
#[derive(Clone, Debug)]
pub struct EstimateTrace {
    pub layout: StateLayout,
    pub algorithm: Algorithm,
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub variances: Vec<DVector<f64>>,
    pub innovations: Vec<Innovation>,
    estimated_parameters: Vec<usize>,
    fixed_parameters: DVector<f64>,
}

impl EstimateTrace {
    pub(crate) fn with_capacity(config: &FilterConfig, system: &ParametricSystem, n: usize) -> Self {
        let names: Vec<String> = config
            .estimated_parameters
            .iter()
            .map(|&i| system.parameter_names()[i].clone())
            .collect();
        Self {
            layout: config.layout,
            algorithm: config.algorithm,
            labels: config.layout.labels(&names),
            times: Vec::with_capacity(n),
            means: Vec::with_capacity(n),
            variances: Vec::with_capacity(n),
            innovations: Vec::with_capacity(n),
            estimated_parameters: config.estimated_parameters.clone(),
            fixed_parameters: config.fixed_parameters.clone(),
        }
    }

    pub(crate) fn push(&mut self, state: &AugmentedState, innovation: Innovation) {
        self.times.push(innovation.time);
        self.means.push(state.mean.clone());
        self.variances.push(state.variances());
        self.innovations.push(innovation);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// History of one augmented entry.
    pub fn series(&self, index: usize) -> Vec<f64> {
        self.means.iter().map(|m| m[index]).collect()
    }

    pub fn final_mean(&self) -> Option<&DVector<f64>> {
        self.means.last()
    }

    /// Full system parameter vector at the last event.
    pub fn final_system_parameters(&self) -> Option<DVector<f64>> {
        let last = self.means.last()?;
        let mut p = self.fixed_parameters.clone();
        for (slot, &i) in self.layout.parameters().zip(&self.estimated_parameters) {
            p[i] = last[slot];
        }
        Some(p)
    }

    pub fn estimated_parameters(&self) -> &[usize] {
        &self.estimated_parameters
    }

    /// `time_s`, one column per mean entry, then `var_<label>` columns.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["time_s".to_string()];
        header.extend(self.labels.iter().cloned());
        header.extend(self.labels.iter().map(|l| format!("var_{l}")));
        csv.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for ((t, m), v) in self.times.iter().zip(&self.means).zip(&self.variances) {
            row.clear();
            row.push(format!("{t:.9}"));
            row.extend(m.iter().map(|x| format!("{x:.9e}")));
            row.extend(v.iter().map(|x| format!("{x:.9e}")));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}
