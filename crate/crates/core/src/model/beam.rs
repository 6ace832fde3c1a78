use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};

use super::{rayleigh, DampingForm, Excitation, ParametricSystem};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamSupport {
    /// Node 0 clamped.
    Cantilever,
    /// Translation restrained at both end nodes.
    SimplySupported,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RayleighSpec {
    Coefficients {
        alpha: f64,
        beta: f64,
    },
    /// Least-squares fit of a constant ratio over the first `n_modes` modes.
    ModalRatio {
        ratio: f64,
        n_modes: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub length: f64,
    pub n_elements: usize,
    /// Flexural rigidity EI, N·m².
    pub flexural_rigidity: f64,
    /// ρA, kg/m.
    pub mass_per_length: f64,
    pub support: BeamSupport,
    pub rayleigh: RayleighSpec,
    /// Distance from the neutral axis to the strain gauges, m.
    pub gauge_offset: f64,
}

/// Euler–Bernoulli beam with Hermitian cubic elements; every node carries a
/// transverse translation and a rotation.
#[derive(Clone, Debug)]
pub struct BeamModel {
    spec: BeamSpec,
    element_length: f64,
    /// Free DOF indices of `(w, θ)` per node.
    node_dofs: Vec<(Option<usize>, Option<usize>)>,
    rayleigh: (f64, f64),
    system: ParametricSystem,
}

/// Element stiffness for unit EI.
fn element_stiffness(l: f64) -> Matrix4<f64> {
    let l2 = l * l;
    Matrix4::new(
        12.0,
        6.0 * l,
        -12.0,
        6.0 * l,
        6.0 * l,
        4.0 * l2,
        -6.0 * l,
        2.0 * l2,
        -12.0,
        -6.0 * l,
        12.0,
        -6.0 * l,
        6.0 * l,
        2.0 * l2,
        -6.0 * l,
        4.0 * l2,
    ) / (l2 * l)
}

/// Consistent element mass.
fn element_mass(l: f64, rho_a: f64) -> Matrix4<f64> {
    let l2 = l * l;
    Matrix4::new(
        156.0,
        22.0 * l,
        54.0,
        -13.0 * l,
        22.0 * l,
        4.0 * l2,
        13.0 * l,
        -3.0 * l2,
        54.0,
        13.0 * l,
        156.0,
        -22.0 * l,
        -13.0 * l,
        -3.0 * l2,
        -22.0 * l,
        4.0 * l2,
    ) * (rho_a * l / 420.0)
}

pub fn build_beam(spec: &BeamSpec, excitation: Excitation) -> Result<BeamModel> {
    if spec.n_elements == 0 {
        return Err(Error::invalid("n_elements", "at least one element is required"));
    }
    if !(spec.flexural_rigidity > 0.0) {
        return Err(Error::invalid("flexural_rigidity", "must be positive"));
    }
    if !(spec.length > 0.0) {
        return Err(Error::invalid("length", "must be positive"));
    }
    if !(spec.mass_per_length > 0.0) {
        return Err(Error::invalid("mass_per_length", "must be positive"));
    }
    let ne = spec.n_elements;
    let le = spec.length / ne as f64;
    let restrained: Vec<usize> = match spec.support {
        BeamSupport::Cantilever => vec![0, 1],
        BeamSupport::SimplySupported => vec![0, 2 * ne],
    };
    let mut node_dofs = Vec::with_capacity(ne + 1);
    let mut next = 0;
    let mut take = |g: usize| {
        if restrained.contains(&g) {
            None
        } else {
            next += 1;
            Some(next - 1)
        }
    };
    for node in 0..=ne {
        let w = take(2 * node);
        let t = take(2 * node + 1);
        node_dofs.push((w, t));
    }
    let n = 2 * (ne + 1) - restrained.len();

    let mut k = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    let ke = element_stiffness(le);
    let me = element_mass(le, spec.mass_per_length);
    for e in 0..ne {
        let (w1, t1) = node_dofs[e];
        let (w2, t2) = node_dofs[e + 1];
        let map = [w1, t1, w2, t2];
        for a in 0..4 {
            let Some(i) = map[a] else { continue };
            for b in 0..4 {
                if let Some(j) = map[b] {
                    k[(i, j)] += ke[(a, b)];
                    m[(i, j)] += me[(a, b)];
                }
            }
        }
    }

    let (alpha, beta) = match spec.rayleigh {
        RayleighSpec::Coefficients { alpha, beta } => (alpha, beta),
        RayleighSpec::ModalRatio { ratio, n_modes } => {
            let eig = crate::linalg::generalized_eigenvalues(&(&k * spec.flexural_rigidity), &m)?;
            if eig.len() < n_modes {
                return Err(Error::invalid("n_modes", "more modes than DOFs"));
            }
            let w: Vec<f64> = eig[..n_modes].iter().map(|l| l.max(0.0).sqrt()).collect();
            rayleigh::fit(&w, ratio)?
        }
    };

    let mut ground = DVector::zeros(n);
    for (w, _) in &node_dofs {
        if let Some(i) = w {
            ground[*i] = 1.0;
        }
    }
    let system = ParametricSystem::new(
        m,
        vec![k],
        DampingForm::Rayleigh,
        excitation,
        ground,
        vec!["EI".into(), "alpha".into(), "beta".into()],
        DVector::from_vec(vec![spec.flexural_rigidity, alpha, beta]),
    )?;
    Ok(BeamModel {
        spec: spec.clone(),
        element_length: le,
        node_dofs,
        rayleigh: (alpha, beta),
        system,
    })
}

impl BeamModel {
    pub fn system(&self) -> &ParametricSystem {
        &self.system
    }

    pub fn spec(&self) -> &BeamSpec {
        &self.spec
    }

    pub fn n_elements(&self) -> usize {
        self.spec.n_elements
    }

    pub fn element_length(&self) -> f64 {
        self.element_length
    }

    pub fn rayleigh(&self) -> (f64, f64) {
        self.rayleigh
    }

    /// Free DOF of the transverse translation at `node`.
    pub fn translation_dof(&self, node: usize) -> Option<usize> {
        self.node_dofs.get(node).and_then(|d| d.0)
    }

    pub fn rotation_dof(&self, node: usize) -> Option<usize> {
        self.node_dofs.get(node).and_then(|d| d.1)
    }

    /// Row `r` over free displacements with `ε = r · u = −z w''(ξ)` on element `e`.
    pub fn strain_row(&self, e: usize, position: f64) -> Result<DVector<f64>> {
        if e >= self.n_elements() {
            return Err(Error::MapMismatch(format!(
                "element {e} out of range for {} elements",
                self.n_elements()
            )));
        }
        if !(0.0..=1.0).contains(&position) {
            return Err(Error::MapMismatch(format!("position {position} outside [0, 1]")));
        }
        let l = self.element_length;
        let xi = position;
        // second derivatives of the Hermite shape functions w.r.t. x
        let d2 = [
            (-6.0 + 12.0 * xi) / (l * l),
            (-4.0 + 6.0 * xi) / l,
            (6.0 - 12.0 * xi) / (l * l),
            (-2.0 + 6.0 * xi) / l,
        ];
        let (w1, t1) = self.node_dofs[e];
        let (w2, t2) = self.node_dofs[e + 1];
        let mut row = DVector::zeros(self.system.n_dof());
        for (dof, c) in [w1, t1, w2, t2].into_iter().zip(d2) {
            if let Some(i) = dof {
                row[i] -= self.spec.gauge_offset * c;
            }
        }
        Ok(row)
    }
}
