use nalgebra::{DMatrix, DVector};

use super::{DampingForm, Excitation, ParametricSystem};
use crate::error::{Error, Result};

/// N-story shear building: one lateral DOF per floor, story `i` joins floor
/// `i-1` (or the ground) to floor `i`.
#[derive(Clone, Debug)]
pub struct ShearFrameModel {
    masses: Vec<f64>,
    stiffnesses: Vec<f64>,
    dampings: Vec<f64>,
    excitation: Excitation,
    system: ParametricSystem,
}

/// Unit-coefficient story matrix for story `i` in an `n`-story frame.
fn story_basis(n: usize, i: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, n);
    b[(i, i)] = 1.0;
    if i > 0 {
        b[(i - 1, i - 1)] = 1.0;
        b[(i - 1, i)] = -1.0;
        b[(i, i - 1)] = -1.0;
    }
    b
}

pub fn build_shear_frame(
    masses: &[f64],
    stiffnesses: &[f64],
    dampings: &[f64],
    excitation: Excitation,
) -> Result<ShearFrameModel> {
    let n = masses.len();
    if n == 0 {
        return Err(Error::invalid("masses", "at least one story is required"));
    }
    if stiffnesses.len() != n || dampings.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} masses, {} stiffnesses, {} dampings",
            n,
            stiffnesses.len(),
            dampings.len()
        )));
    }
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::invalid("masses", format!("{m} is not strictly positive")));
    }

    let basis: Vec<_> = (0..n).map(|i| story_basis(n, i)).collect();
    let names = (1..=n)
        .map(|i| format!("k{i}"))
        .chain((1..=n).map(|i| format!("c{i}")))
        .collect();
    let nominal = DVector::from_iterator(2 * n, stiffnesses.iter().chain(dampings).copied());
    let system = ParametricSystem::new(
        DMatrix::from_diagonal(&DVector::from_column_slice(masses)),
        basis.clone(),
        DampingForm::Explicit(basis),
        excitation,
        DVector::from_element(n, 1.0),
        names,
        nominal,
    )?;
    Ok(ShearFrameModel {
        masses: masses.to_vec(),
        stiffnesses: stiffnesses.to_vec(),
        dampings: dampings.to_vec(),
        excitation,
        system,
    })
}

impl ShearFrameModel {
    pub fn n_stories(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn stiffnesses(&self) -> &[f64] {
        &self.stiffnesses
    }

    pub fn dampings(&self) -> &[f64] {
        &self.dampings
    }

    pub fn excitation(&self) -> Excitation {
        self.excitation
    }

    pub fn system(&self) -> &ParametricSystem {
        &self.system
    }
}
