//! Unscented and constrained-gain unscented Kalman filtering of the augmented
//! state `[u, u̇, input, θ]`.

mod cgukf;
mod filter;
mod sigma;
mod trace;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cgukf::{cgukf_gain, Bound, ConstrainedGain};
pub use filter::{measurement_update, run_filter, time_update, Filter, Innovation, StepContext};
pub use sigma::{generate_sigma_points, SigmaPointSet, SigmaSpec};
pub use trace::EstimateTrace;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, FactorOrder};
use crate::model::ParametricSystem;

/// Block structure of the augmented vector: displacements, velocities, an
/// optional unknown input, then the estimated parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub n_dof: usize,
    pub n_inputs: usize,
    pub n_params: usize,
}

impl StateLayout {
    pub fn new(n_dof: usize, estimate_input: bool, n_params: usize) -> Self {
        Self {
            n_dof,
            n_inputs: usize::from(estimate_input),
            n_params,
        }
    }

    pub fn size(&self) -> usize {
        2 * self.n_dof + self.n_inputs + self.n_params
    }

    pub fn displacement(&self) -> Range<usize> {
        0..self.n_dof
    }

    pub fn velocity(&self) -> Range<usize> {
        self.n_dof..2 * self.n_dof
    }

    /// `[u; u̇]`.
    pub fn structural(&self) -> Range<usize> {
        0..2 * self.n_dof
    }

    pub fn input(&self) -> Range<usize> {
        2 * self.n_dof..2 * self.n_dof + self.n_inputs
    }

    pub fn parameters(&self) -> Range<usize> {
        let s = 2 * self.n_dof + self.n_inputs;
        s..s + self.n_params
    }

    pub fn estimates_input(&self) -> bool {
        self.n_inputs > 0
    }

    /// Column labels, e.g. `u1, ..., v1, ..., f, k1, ...`.
    pub fn labels(&self, parameter_names: &[String]) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.n_dof).map(|i| format!("u{i}")).collect();
        out.extend((1..=self.n_dof).map(|i| format!("v{i}")));
        if self.estimates_input() {
            out.push("f".into());
        }
        out.extend(parameter_names.iter().cloned());
        out
    }
}

/// Mean and covariance of the augmented vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub layout: StateLayout,
}

impl AugmentedState {
    pub fn new(mean: DVector<f64>, mut covariance: DMatrix<f64>, layout: StateLayout) -> Result<Self> {
        let n = layout.size();
        if mean.len() != n || covariance.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "layout needs {n} entries, got mean {} and covariance {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        symmetrize(&mut covariance);
        Ok(Self {
            mean,
            covariance,
            layout,
        })
    }

    pub fn structural(&self) -> DVector<f64> {
        self.mean.rows_range(self.layout.structural()).into_owned()
    }

    pub fn parameters(&self) -> DVector<f64> {
        self.mean.rows_range(self.layout.parameters()).into_owned()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// How sigma points are carried across a time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrator {
    /// Matrix-exponential discretization with a first-order hold on known inputs.
    Exact,
    /// Newmark average acceleration with `substeps` steps per interval.
    Newmark { substeps: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Ukf,
    Cgukf,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ukf => "ukf",
            Algorithm::Cgukf => "cgukf",
        }
    }
}

/// Everything a filter run needs besides the model and data.
#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub layout: StateLayout,
    /// Indices into the system parameter vector carried in the augmented state.
    pub estimated_parameters: Vec<usize>,
    /// Full system parameter vector; entries not estimated stay at these values.
    pub fixed_parameters: DVector<f64>,
    pub initial_mean: DVector<f64>,
    pub initial_covariance: DMatrix<f64>,
    /// Diagonal of `P_Q`, added once per time step.
    pub process_noise: DVector<f64>,
    pub sigma: SigmaSpec,
    /// Square-root factor used inside the filter. `Upper` keeps parameter
    /// rows of the state columns at zero so fewer distinct models are built.
    pub factor: FactorOrder,
    pub integrator: Integrator,
    pub algorithm: Algorithm,
    /// Only enforced by [`Algorithm::Cgukf`].
    pub constraints: Vec<Bound>,
    /// Time of the initial estimate.
    pub initial_time: f64,
}

impl FilterConfig {
    /// Starts from zero structural state and the given parameter guesses.
    ///
    /// Covariance and process noise are diagonal, one value per block.
    #[allow(clippy::too_many_arguments)]
    pub fn with_blocks(
        system: &ParametricSystem,
        estimated_parameters: Vec<usize>,
        parameter_guess: &DVector<f64>,
        estimate_input: bool,
        initial_variance: BlockValues,
        process_variance: BlockValues,
    ) -> Result<Self> {
        let layout = StateLayout::new(system.n_dof(), estimate_input, estimated_parameters.len());
        if parameter_guess.len() != system.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter guess has {} entries, system has {}",
                parameter_guess.len(),
                system.n_params()
            )));
        }
        let mut mean = DVector::zeros(layout.size());
        for (slot, &p) in layout.parameters().zip(&estimated_parameters) {
            if p >= system.n_params() {
                return Err(Error::invalid(
                    "estimated_parameters",
                    format!("index {p} out of range"),
                ));
            }
            mean[slot] = parameter_guess[p];
        }
        let init = initial_variance.expand(&layout)?;
        let cfg = Self {
            layout,
            estimated_parameters,
            fixed_parameters: parameter_guess.clone(),
            initial_mean: mean,
            initial_covariance: DMatrix::from_diagonal(&init),
            process_noise: process_variance.expand(&layout)?,
            sigma: SigmaSpec::default(),
            factor: FactorOrder::Upper,
            integrator: Integrator::Exact,
            algorithm: Algorithm::Ukf,
            constraints: Vec::new(),
            initial_time: 0.0,
        };
        cfg.validate(system)?;
        Ok(cfg)
    }

    pub fn validate(&self, system: &ParametricSystem) -> Result<()> {
        let n = self.layout.size();
        if self.layout.n_dof != system.n_dof() {
            return Err(Error::DimensionMismatch(format!(
                "layout has {} DOFs, model has {}",
                self.layout.n_dof,
                system.n_dof()
            )));
        }
        if self.layout.n_inputs > 1 {
            return Err(Error::invalid(
                "layout.n_inputs",
                "at most one unknown input is supported",
            ));
        }
        if self.estimated_parameters.len() != self.layout.n_params {
            return Err(Error::DimensionMismatch(
                "estimated parameter list and layout disagree".into(),
            ));
        }
        let mut seen = vec![false; system.n_params()];
        for &p in &self.estimated_parameters {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid(
                    "estimated_parameters",
                    format!("index {p} out of range or repeated"),
                ));
            }
        }
        if self.fixed_parameters.len() != system.n_params() {
            return Err(Error::DimensionMismatch("fixed parameter vector length".into()));
        }
        if self.initial_mean.len() != n || self.initial_covariance.shape() != (n, n) || self.process_noise.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "filter vectors must have {n} entries"
            )));
        }
        if let Some(q) = self.process_noise.iter().find(|q| !(**q >= 0.0)) {
            return Err(Error::invalid(
                "process_noise",
                format!("{q} is negative or not a number"),
            ));
        }
        self.sigma.validate()?;
        if let Integrator::Newmark { substeps: 0 } = self.integrator {
            return Err(Error::invalid("integrator.substeps", "must be at least 1"));
        }
        for b in &self.constraints {
            b.validate(n)?;
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<AugmentedState> {
        AugmentedState::new(self.initial_mean.clone(), self.initial_covariance.clone(), self.layout)
    }

    /// Lower bound 0 on every estimated parameter.
    pub fn non_negative_parameters(&self) -> Vec<Bound> {
        self.layout.parameters().map(|i| Bound::lower(i, 0.0)).collect()
    }

    /// Full system parameter vector with estimated entries from `augmented`.
    pub fn system_parameters(&self, augmented: &DVector<f64>) -> DVector<f64> {
        let mut p = self.fixed_parameters.clone();
        for (slot, &i) in self.layout.parameters().zip(&self.estimated_parameters) {
            p[i] = augmented[slot];
        }
        p
    }
}

/// One diagonal value per block; parameter entries may be given individually.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockValues {
    pub displacement: f64,
    pub velocity: f64,
    pub input: f64,
    pub parameters: Vec<f64>,
}

impl BlockValues {
    pub fn expand(&self, layout: &StateLayout) -> Result<DVector<f64>> {
        if self.parameters.len() != layout.n_params {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter values for {} estimated parameters",
                self.parameters.len(),
                layout.n_params
            )));
        }
        let mut v = DVector::zeros(layout.size());
        v.rows_range_mut(layout.displacement()).fill(self.displacement);
        v.rows_range_mut(layout.velocity()).fill(self.velocity);
        v.rows_range_mut(layout.input()).fill(self.input);
        for (slot, &p) in layout.parameters().zip(&self.parameters) {
            v[slot] = p;
        }
        if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::invalid("variance", format!("{x} is negative or not a number")));
        }
        Ok(v)
    }
}
