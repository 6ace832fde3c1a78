//! Parameterized linear structural models and their response maps.
//!
//! Every model reduces to a [`ParametricSystem`]: a fixed mass matrix, a
//! stiffness matrix that is linear in the stiffness-type parameters, and a
//! damping matrix that is either linear in explicit damping parameters or of
//! Rayleigh form `C = αM + βK`. The filters only ever talk to that view,
//! plus the compiled response maps.

mod beam;
mod frame;
pub mod rayleigh;
mod truss;

pub use beam::{build_beam, BeamModel, BeamSpec, BeamSupport, RayleighSpec};
pub use frame::{build_shear_frame, ShearFrameModel};
pub use truss::{build_truss, MemberClass, TrussGeometry, TrussMember, TrussModel};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// How the scalar input enters the equations of motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Excitation {
    /// Support acceleration `üg`; load vector `-M r` with `r` the rigid influence vector.
    GroundMotion,
    /// Point force on one free DOF.
    NodalForce { dof: usize },
}

#[derive(Clone, Debug)]
pub enum DampingForm {
    /// `C = Σ cᵢ Cᵢ`, one basis matrix per damping parameter.
    Explicit(Vec<DMatrix<f64>>),
    /// `C = αM + βK(θ)`; the last two parameters are `α` and `β`.
    Rayleigh,
}

/// Mass, damping and stiffness of a linear structure as functions of a
/// parameter vector.
#[derive(Clone, Debug)]
pub struct ParametricSystem {
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    stiffness_basis: Vec<DMatrix<f64>>,
    damping: DampingForm,
    load: DVector<f64>,
    load_accel: DVector<f64>,
    ground_influence: Option<DVector<f64>>,
    names: Vec<String>,
    nominal: DVector<f64>,
}

/// Assembled matrices for one parameter vector.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

impl ParametricSystem {
    pub(crate) fn new(
        mass: DMatrix<f64>,
        stiffness_basis: Vec<DMatrix<f64>>,
        damping: DampingForm,
        excitation: Excitation,
        ground_influence: DVector<f64>,
        names: Vec<String>,
        nominal: DVector<f64>,
    ) -> Result<Self> {
        let n = mass.nrows();
        let mass_inv = linalg::spd_inverse(&mass, "mass matrix")?;
        let (load, ground) = match excitation {
            Excitation::GroundMotion => (-(&mass * &ground_influence), Some(ground_influence)),
            Excitation::NodalForce { dof } => {
                if dof >= n {
                    return Err(Error::invalid(
                        "excitation.dof",
                        format!("{dof} out of range for {n} DOFs"),
                    ));
                }
                let mut b = DVector::zeros(n);
                b[dof] = 1.0;
                (b, None)
            }
        };
        let load_accel = &mass_inv * &load;
        Ok(Self {
            mass,
            mass_inv,
            stiffness_basis,
            damping,
            load,
            load_accel,
            ground_influence: ground,
            names,
            nominal,
        })
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.nominal.len()
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    /// Parameter values the model was built with.
    pub fn nominal_parameters(&self) -> &DVector<f64> {
        &self.nominal
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn mass_inverse(&self) -> &DMatrix<f64> {
        &self.mass_inv
    }

    /// Load vector `b` with `f(t) = b · input(t)`.
    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    /// Rigid-body influence vector for ground motion, `None` for nodal forcing.
    pub fn ground_influence(&self) -> Option<&DVector<f64>> {
        self.ground_influence.as_ref()
    }

    pub fn is_rayleigh(&self) -> bool {
        matches!(self.damping, DampingForm::Rayleigh)
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn stiffness(&self, params: &[f64]) -> DMatrix<f64> {
        let n = self.n_dof();
        let mut k = DMatrix::zeros(n, n);
        for (basis, &theta) in self.stiffness_basis.iter().zip(params) {
            add_scaled(&mut k, theta, basis);
        }
        k
    }

    fn damping_with(&self, params: &[f64], stiffness: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = self.stiffness_basis.len();
        match &self.damping {
            DampingForm::Explicit(basis) => {
                let n = self.n_dof();
                let mut c = DMatrix::zeros(n, n);
                for (b, &theta) in basis.iter().zip(&params[ns..]) {
                    add_scaled(&mut c, theta, b);
                }
                c
            }
            DampingForm::Rayleigh => &self.mass * params[ns] + stiffness * params[ns + 1],
        }
    }

    pub fn matrices(&self, params: &[f64]) -> Result<SystemMatrices> {
        self.check(params)?;
        let stiffness = self.stiffness(params);
        let damping = self.damping_with(params, &stiffness);
        Ok(SystemMatrices {
            mass: self.mass.clone(),
            damping,
            stiffness,
        })
    }

    /// First-order form `ż = A z + B input` with `z = [u; u̇]`.
    pub fn state_space(&self, params: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = self.matrices(params)?;
        let n = self.n_dof();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
        }
        a.view_mut((n, 0), (n, n))
            .copy_from(&(-(&self.mass_inv * &m.stiffness)));
        a.view_mut((n, n), (n, n)).copy_from(&(-(&self.mass_inv * &m.damping)));
        let mut b = DMatrix::zeros(2 * n, 1);
        b.view_mut((n, 0), (n, 1)).copy_from(&self.load_accel);
        Ok((a, b))
    }

    /// Relative acceleration `M⁻¹(b·input − C u̇ − K u)`.
    pub fn acceleration(&self, params: &[f64], disp: &DVector<f64>, vel: &DVector<f64>, input: f64) -> DVector<f64> {
        let n = self.n_dof();
        let ns = self.stiffness_basis.len();
        let mut internal = DVector::zeros(n);
        for (basis, &theta) in self.stiffness_basis.iter().zip(params) {
            internal.gemv(theta, basis, disp, 1.0);
        }
        match &self.damping {
            DampingForm::Explicit(basis) => {
                for (b, &theta) in basis.iter().zip(&params[ns..]) {
                    internal.gemv(theta, b, vel, 1.0);
                }
            }
            DampingForm::Rayleigh => {
                let (alpha, beta) = (params[ns], params[ns + 1]);
                internal.gemv(alpha, &self.mass, vel, 1.0);
                for (basis, &theta) in self.stiffness_basis.iter().zip(params) {
                    internal.gemv(beta * theta, basis, vel, 1.0);
                }
            }
        }
        let mut acc = -(&self.mass_inv * internal);
        acc.axpy(input, &self.load_accel, 1.0);
        acc
    }

    /// Undamped natural circular frequencies (rad/s), ascending.
    pub fn natural_frequencies(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.check(params)?;
        let k = self.stiffness(params);
        Ok(linalg::generalized_eigenvalues(&k, &self.mass)?
            .into_iter()
            .map(|l| l.max(0.0).sqrt())
            .collect())
    }
}

/// Physical quantity a sensor reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Acceleration,
    Displacement,
    Velocity,
    AxialStrain,
    BendingStrain,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Acceleration => "acceleration",
            Quantity::Displacement => "displacement",
            Quantity::Velocity => "velocity",
            Quantity::AxialStrain => "axial_strain",
            Quantity::BendingStrain => "bending_strain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFrame {
    #[default]
    Absolute,
    Relative,
}

/// Where on the model a response is read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTarget {
    /// Free DOF index (0-based).
    Dof(usize),
    /// Truss member index (0-based).
    Member(usize),
    /// Beam element index (0-based) and position along it in `[0, 1]`.
    Element { index: usize, position: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMap {
    pub quantity: Quantity,
    pub target: MapTarget,
    #[serde(default)]
    pub frame: ReferenceFrame,
}

impl ResponseMap {
    pub fn new(quantity: Quantity, target: MapTarget, frame: ReferenceFrame) -> Self {
        Self {
            quantity,
            target,
            frame,
        }
    }

    pub fn acceleration(dof: usize, frame: ReferenceFrame) -> Self {
        Self::new(Quantity::Acceleration, MapTarget::Dof(dof), frame)
    }

    pub fn displacement(dof: usize) -> Self {
        Self::new(Quantity::Displacement, MapTarget::Dof(dof), ReferenceFrame::Relative)
    }

    pub fn velocity(dof: usize) -> Self {
        Self::new(Quantity::Velocity, MapTarget::Dof(dof), ReferenceFrame::Relative)
    }

    pub fn axial_strain(member: usize) -> Self {
        Self::new(
            Quantity::AxialStrain,
            MapTarget::Member(member),
            ReferenceFrame::Relative,
        )
    }

    pub fn bending_strain(element: usize, position: f64) -> Self {
        Self::new(
            Quantity::BendingStrain,
            MapTarget::Element {
                index: element,
                position,
            },
            ReferenceFrame::Relative,
        )
    }
}

/// A response map reduced to what the filter evaluates per sigma point.
#[derive(Clone, Debug)]
pub enum CompiledMap {
    /// `row · [u; u̇]`.
    Linear(DVector<f64>),
    /// `ü_dof` from the equations of motion, plus `ground_gain · input`.
    Acceleration { dof: usize, ground_gain: f64 },
}

impl CompiledMap {
    pub fn is_acceleration(&self) -> bool {
        matches!(self, CompiledMap::Acceleration { .. })
    }
}

/// One of the three supported structures.
#[derive(Clone, Debug)]
pub enum StructuralModel {
    ShearFrame(ShearFrameModel),
    Truss(TrussModel),
    Beam(BeamModel),
}

impl StructuralModel {
    pub fn system(&self) -> &ParametricSystem {
        match self {
            StructuralModel::ShearFrame(m) => m.system(),
            StructuralModel::Truss(m) => m.system(),
            StructuralModel::Beam(m) => m.system(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StructuralModel::ShearFrame(_) => "shear_frame",
            StructuralModel::Truss(_) => "truss",
            StructuralModel::Beam(_) => "beam",
        }
    }

    pub fn n_dof(&self) -> usize {
        self.system().n_dof()
    }

    /// Strain maps for every member (truss) or every element midpoint (beam).
    pub fn strain_maps(&self) -> Result<Vec<ResponseMap>> {
        match self {
            StructuralModel::Truss(t) => Ok((0..t.n_members()).map(ResponseMap::axial_strain).collect()),
            StructuralModel::Beam(b) => Ok((0..b.n_elements())
                .map(|e| ResponseMap::bending_strain(e, 0.5))
                .collect()),
            StructuralModel::ShearFrame(_) => Err(Error::MapMismatch("shear frames carry no strain maps".into())),
        }
    }

    pub fn compile(&self, map: &ResponseMap) -> Result<CompiledMap> {
        let n = self.n_dof();
        let dof_of = |target: &MapTarget| -> Result<usize> {
            match *target {
                MapTarget::Dof(d) if d < n => Ok(d),
                MapTarget::Dof(d) => Err(Error::MapMismatch(format!("DOF {d} out of range for {n} free DOFs"))),
                _ => Err(Error::MapMismatch(format!(
                    "{} maps need a DOF target",
                    map.quantity.as_str()
                ))),
            }
        };
        let ground = self.system().ground_influence();
        match map.quantity {
            Quantity::Acceleration => {
                let dof = dof_of(&map.target)?;
                let ground_gain = match (map.frame, ground) {
                    (ReferenceFrame::Absolute, Some(r)) => r[dof],
                    _ => 0.0,
                };
                Ok(CompiledMap::Acceleration { dof, ground_gain })
            }
            Quantity::Displacement | Quantity::Velocity => {
                let dof = dof_of(&map.target)?;
                if map.frame == ReferenceFrame::Absolute && ground.is_some() {
                    return Err(Error::MapMismatch(
                        "absolute displacement/velocity needs the base motion, which is not tracked".into(),
                    ));
                }
                let mut row = DVector::zeros(2 * n);
                let offset = if map.quantity == Quantity::Velocity { n } else { 0 };
                row[offset + dof] = 1.0;
                Ok(CompiledMap::Linear(row))
            }
            Quantity::AxialStrain => match (self, map.target) {
                (StructuralModel::Truss(t), MapTarget::Member(e)) => {
                    let r = t.strain_row(e)?;
                    Ok(CompiledMap::Linear(pad_displacement_row(&r)))
                }
                _ => Err(Error::MapMismatch(
                    "axial strain needs a truss model and a member target".into(),
                )),
            },
            Quantity::BendingStrain => match (self, map.target) {
                (StructuralModel::Beam(b), MapTarget::Element { index, position }) => {
                    let r = b.strain_row(index, position)?;
                    Ok(CompiledMap::Linear(pad_displacement_row(&r)))
                }
                _ => Err(Error::MapMismatch(
                    "bending strain needs a beam model and an element target".into(),
                )),
            },
        }
    }
}

/// `a += s·b` without allocating.
pub(crate) fn add_scaled(a: &mut DMatrix<f64>, s: f64, b: &DMatrix<f64>) {
    a.zip_apply(b, |x, y| *x += s * y);
}

fn pad_displacement_row(r: &DVector<f64>) -> DVector<f64> {
    let n = r.len();
    let mut row = DVector::zeros(2 * n);
    row.rows_mut(0, n).copy_from(r);
    row
}

/// Evaluates a compiled map on a `[u; u̇]` snapshot.
pub(crate) fn evaluate_compiled(
    system: &ParametricSystem,
    map: &CompiledMap,
    state: &DVector<f64>,
    params: &[f64],
    input: f64,
    accel_cache: &mut Option<DVector<f64>>,
) -> f64 {
    match map {
        CompiledMap::Linear(row) => row.dot(state),
        CompiledMap::Acceleration { dof, ground_gain } => {
            let acc = accel_cache.get_or_insert_with(|| {
                let n = system.n_dof();
                system.acceleration(
                    params,
                    &state.rows(0, n).into_owned(),
                    &state.rows(n, n).into_owned(),
                    input,
                )
            });
            acc[*dof] + ground_gain * input
        }
    }
}

/// Reads one sensor response from a state snapshot `[u; u̇]`.
///
/// Acceleration maps use `params` (the structural parameters carried by the
/// snapshot) and the current input; absolute-frame accelerations add the
/// ground acceleration for base-excited models.
pub fn evaluate_response_map(
    model: &StructuralModel,
    map: &ResponseMap,
    state: &DVector<f64>,
    params: &[f64],
    input: f64,
) -> Result<f64> {
    let system = model.system();
    if state.len() != 2 * system.n_dof() {
        return Err(Error::DimensionMismatch(format!(
            "state snapshot has {} entries, model needs {}",
            state.len(),
            2 * system.n_dof()
        )));
    }
    system.check(params)?;
    let compiled = model.compile(map)?;
    Ok(evaluate_compiled(system, &compiled, state, params, input, &mut None))
}
