use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conditioned_sqrt, FactorOrder};

/// Scaled unscented transform settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSpec {
    /// Spread parameter; the square root is taken of `(S_N + eta)·P`.
    pub eta: f64,
    /// Added to the central covariance weight only.
    pub covariance_correction: f64,
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self {
            eta: 1.0,
            covariance_correction: 0.0,
        }
    }
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("sigma.eta", "must be positive and finite"));
        }
        if !self.covariance_correction.is_finite() {
            return Err(Error::invalid("sigma.covariance_correction", "must be finite"));
        }
        Ok(())
    }
}

/// `2 S_N + 1` points stored as matrix columns, with their weights.
#[derive(Clone, Debug)]
pub struct SigmaPointSet {
    pub points: DMatrix<f64>,
    pub mean_weights: DVector<f64>,
    pub covariance_weights: DVector<f64>,
    pub eta: f64,
}

impl SigmaPointSet {
    pub fn generate(
        mean: &DVector<f64>,
        covariance: &DMatrix<f64>,
        spec: &SigmaSpec,
        order: FactorOrder,
    ) -> Result<Self> {
        spec.validate()?;
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "mean has {n} entries, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::Empty("augmented state".into()));
        }
        let scale = n as f64 + spec.eta;
        let root = conditioned_sqrt(covariance, order)? * scale.sqrt();
        let mut points = DMatrix::zeros(n, 2 * n + 1);
        points.column_mut(0).copy_from(mean);
        for i in 0..n {
            let c = root.column(i);
            points.column_mut(1 + i).copy_from(&(mean + c));
            points.column_mut(1 + n + i).copy_from(&(mean - c));
        }
        let (mean_weights, covariance_weights) = weights(n, spec);
        Ok(Self {
            points,
            mean_weights,
            covariance_weights,
            eta: spec.eta,
        })
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.column(i).into_owned()
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.mean_weights)
    }

    /// Weighted covariance of the points about `mean`.
    pub fn covariance(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let d = deviations(&self.points, mean);
        weighted_outer(&d, &d, &self.covariance_weights)
    }
}

/// Square root via lower-triangular Cholesky and the default transform.
pub fn generate_sigma_points(mean: &DVector<f64>, covariance: &DMatrix<f64>, eta: f64) -> Result<SigmaPointSet> {
    SigmaPointSet::generate(
        mean,
        covariance,
        &SigmaSpec {
            eta,
            ..SigmaSpec::default()
        },
        FactorOrder::Lower,
    )
}

pub(crate) fn weights(n: usize, spec: &SigmaSpec) -> (DVector<f64>, DVector<f64>) {
    let s = n as f64 + spec.eta;
    let mut wm = DVector::from_element(2 * n + 1, 0.5 / s);
    wm[0] = spec.eta / s;
    let mut wc = wm.clone();
    wc[0] += spec.covariance_correction;
    (wm, wc)
}

pub(crate) fn weighted_mean(points: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    points * w
}

pub(crate) fn deviations(points: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut d = points.clone();
    for mut c in d.column_iter_mut() {
        c -= mean;
    }
    d
}

/// `Σ wᵢ aᵢ bᵢᵀ` over columns.
pub(crate) fn weighted_outer(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut aw = a.clone();
    for (mut c, &wi) in aw.column_iter_mut().zip(w.iter()) {
        c *= wi;
    }
    aw * b.transpose()
}
