use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{rayleigh, DampingForm, Excitation, ParametricSystem};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberClass {
    Top,
    Bottom,
    Diagonal,
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrussMember {
    pub start: usize,
    pub end: usize,
    /// Cross-sectional area, m².
    pub area: f64,
    pub class: MemberClass,
}

/// Planar pin-jointed truss layout. Global DOF `2i` is the horizontal and
/// `2i + 1` the vertical translation of node `i`; free DOFs are numbered in
/// ascending global order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrussGeometry {
    pub nodes: Vec<[f64; 2]>,
    pub members: Vec<TrussMember>,
    pub restrained_dofs: Vec<usize>,
}

impl TrussGeometry {
    /// Pratt truss with `bays` panels: bottom chord nodes `0..=bays`, top
    /// chord nodes above the interior bottom nodes, end diagonals from the
    /// supports, interior diagonals sloping down toward midspan. Pinned at
    /// node 0, roller (vertical restraint) at node `bays`.
    ///
    /// `areas` are for top, bottom, diagonal and vertical members.
    pub fn pratt(bays: usize, bay_width: f64, height: f64, areas: [f64; 4]) -> Result<Self> {
        if bays < 2 {
            return Err(Error::invalid("bays", "a Pratt truss needs at least two bays"));
        }
        let [top, bottom, diagonal, vertical] = areas;
        let mut nodes: Vec<[f64; 2]> = (0..=bays).map(|i| [i as f64 * bay_width, 0.0]).collect();
        let top_of = |i: usize| bays + i; // top node above bottom node i (1..bays-1)
        for i in 1..bays {
            nodes.push([i as f64 * bay_width, height]);
        }
        let member = |start, end, area, class| TrussMember {
            start,
            end,
            area,
            class,
        };
        let mid = bays as f64 / 2.0;
        let mut members = Vec::new();
        for i in 0..bays {
            // panel i spans bottom nodes i..i+1
            if i == 0 {
                members.push(member(0, top_of(1), diagonal, MemberClass::Diagonal));
            }
            members.push(member(i, i + 1, bottom, MemberClass::Bottom));
            if i + 1 < bays {
                members.push(member(i + 1, top_of(i + 1), vertical, MemberClass::Vertical));
            }
            if i >= 1 && i + 1 < bays {
                // interior panel: diagonal from the outer top node to the inner bottom node
                let (t, b) = if (i as f64 + 0.5) < mid {
                    (top_of(i), i + 1)
                } else {
                    (top_of(i + 1), i)
                };
                members.push(member(t.min(b), t.max(b), diagonal, MemberClass::Diagonal));
                members.push(member(top_of(i), top_of(i + 1), top, MemberClass::Top));
            }
            if i + 1 == bays {
                members.push(member(top_of(bays - 1), bays, diagonal, MemberClass::Diagonal));
            }
        }
        Ok(Self {
            nodes,
            members,
            restrained_dofs: vec![0, 1, 2 * bays + 1],
        })
    }

    /// Four-bay, 2 m × 2 m Pratt truss with 13 members and 13 free DOFs;
    /// member areas 80/100/90/60 mm² for top/bottom/diagonal/vertical.
    pub fn reference() -> Self {
        Self::pratt(4, 2.0, 2.0, [80e-6, 100e-6, 90e-6, 60e-6]).expect("valid reference truss")
    }

    pub fn n_free_dofs(&self) -> usize {
        2 * self.nodes.len() - self.restrained_dofs.len()
    }
}

#[derive(Clone, Debug)]
pub struct TrussModel {
    geometry: TrussGeometry,
    elastic_modulus: f64,
    density: f64,
    lumped_masses: Vec<f64>,
    free_index: Vec<Option<usize>>,
    lengths: Vec<f64>,
    rayleigh: (f64, f64),
    frequencies: Vec<f64>,
    system: ParametricSystem,
}

fn member_frame(geometry: &TrussGeometry, e: usize) -> Result<(f64, f64, f64)> {
    let m = &geometry.members[e];
    let n = geometry.nodes.len();
    if m.start >= n || m.end >= n || m.start == m.end {
        return Err(Error::invalid(
            format!("members[{e}]"),
            format!("invalid node pair ({}, {})", m.start, m.end),
        ));
    }
    let [x1, y1] = geometry.nodes[m.start];
    let [x2, y2] = geometry.nodes[m.end];
    let length = (x2 - x1).hypot(y2 - y1);
    if !(length > 0.0) {
        return Err(Error::invalid(format!("members[{e}]"), "zero length"));
    }
    Ok((length, (x2 - x1) / length, (y2 - y1) / length))
}

fn member_dofs(m: &TrussMember) -> [usize; 4] {
    [2 * m.start, 2 * m.start + 1, 2 * m.end, 2 * m.end + 1]
}

/// Global `2N × 2N` stiffness of member `e` per unit axial rigidity.
fn unit_member_stiffness(geometry: &TrussGeometry, e: usize) -> Result<DMatrix<f64>> {
    let (length, c, s) = member_frame(geometry, e)?;
    let t = [-c, -s, c, s];
    let dofs = member_dofs(&geometry.members[e]);
    let ng = 2 * geometry.nodes.len();
    let mut k = DMatrix::zeros(ng, ng);
    for a in 0..4 {
        for b in 0..4 {
            k[(dofs[a], dofs[b])] += t[a] * t[b] / length;
        }
    }
    Ok(k)
}

#[allow(clippy::too_many_arguments)]
pub fn build_truss(
    geometry: &TrussGeometry,
    elastic_modulus: f64,
    density: f64,
    lumped_masses: &[f64],
    modal_damping_ratio: f64,
    n_modes: usize,
    excitation: Excitation,
) -> Result<TrussModel> {
    if !(elastic_modulus > 0.0) {
        return Err(Error::invalid("elastic_modulus", "must be positive"));
    }
    if !(density >= 0.0) {
        return Err(Error::invalid("density", "must be non-negative"));
    }
    let ng = 2 * geometry.nodes.len();
    let mut free_index = vec![Some(0); ng];
    for &d in &geometry.restrained_dofs {
        if d >= ng {
            return Err(Error::invalid("restrained_dofs", format!("{d} out of range")));
        }
        free_index[d] = None;
    }
    let mut next = 0;
    for slot in free_index.iter_mut().filter(|s| s.is_some()) {
        *slot = Some(next);
        next += 1;
    }
    let n = next;
    if n == 0 {
        return Err(Error::invalid("restrained_dofs", "no free DOF left"));
    }
    if lumped_masses.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} lumped masses for {} free DOFs",
            lumped_masses.len(),
            n
        )));
    }

    let reduce = |full: &DMatrix<f64>| {
        let mut r = DMatrix::zeros(n, n);
        for (gi, fi) in free_index.iter().enumerate() {
            let Some(i) = fi else { continue };
            for (gj, fj) in free_index.iter().enumerate() {
                if let Some(j) = fj {
                    r[(*i, *j)] = full[(gi, gj)];
                }
            }
        }
        r
    };

    let mut lengths = Vec::with_capacity(geometry.members.len());
    let mut basis = Vec::with_capacity(geometry.members.len());
    let mut mass_diag = DVector::from_column_slice(lumped_masses);
    for (e, m) in geometry.members.iter().enumerate() {
        if !(m.area > 0.0) {
            return Err(Error::invalid(format!("members[{e}].area"), "must be positive"));
        }
        let (length, _, _) = member_frame(geometry, e)?;
        lengths.push(length);
        basis.push(reduce(&unit_member_stiffness(geometry, e)?));
        // half the member mass to each end, in both directions
        let half = 0.5 * density * m.area * length;
        for d in member_dofs(m) {
            if let Some(i) = free_index[d] {
                mass_diag[i] += half;
            }
        }
    }
    if let Some(i) = mass_diag.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::invalid("lumped_masses", format!("free DOF {i} has no mass")));
    }
    let mass = DMatrix::from_diagonal(&mass_diag);

    let rigidities: Vec<f64> = geometry.members.iter().map(|m| elastic_modulus * m.area).collect();
    let mut k = DMatrix::zeros(n, n);
    for (b, ea) in basis.iter().zip(&rigidities) {
        super::add_scaled(&mut k, *ea, b);
    }
    let eig = linalg::generalized_eigenvalues(&k, &mass)?;
    let top = eig.last().copied().unwrap_or(0.0).abs();
    if eig[0] <= 1e-10 * top {
        return Err(Error::Singular(format!(
            "truss stiffness is singular (mechanism); smallest eigenvalue {:e}",
            eig[0]
        )));
    }
    let positive = eig.iter().filter(|l| **l > 0.0).count();
    if positive < n_modes {
        return Err(Error::invalid(
            "n_modes",
            format!("{n_modes} requested, only {positive} positive eigenvalues"),
        ));
    }
    let frequencies: Vec<f64> = eig.iter().map(|l| l.sqrt()).collect();
    let (alpha, beta) = rayleigh::fit(&frequencies[..n_modes], modal_damping_ratio)?;

    let names = (1..=geometry.members.len())
        .map(|i| format!("EA{i}"))
        .chain(["alpha".to_string(), "beta".to_string()])
        .collect();
    let nominal = DVector::from_iterator(rigidities.len() + 2, rigidities.iter().copied().chain([alpha, beta]));
    let mut ground = DVector::zeros(n);
    for (g, fi) in free_index.iter().enumerate() {
        if let Some(i) = fi {
            // ground motion acts vertically
            if g % 2 == 1 {
                ground[*i] = 1.0;
            }
        }
    }
    let system = ParametricSystem::new(mass, basis, DampingForm::Rayleigh, excitation, ground, names, nominal)?;
    Ok(TrussModel {
        geometry: geometry.clone(),
        elastic_modulus,
        density,
        lumped_masses: lumped_masses.to_vec(),
        free_index,
        lengths,
        rayleigh: (alpha, beta),
        frequencies,
        system,
    })
}

impl TrussModel {
    pub fn system(&self) -> &ParametricSystem {
        &self.system
    }

    pub fn geometry(&self) -> &TrussGeometry {
        &self.geometry
    }

    pub fn n_members(&self) -> usize {
        self.geometry.members.len()
    }

    pub fn member_length(&self, e: usize) -> f64 {
        self.lengths[e]
    }

    pub fn elastic_modulus(&self) -> f64 {
        self.elastic_modulus
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn lumped_masses(&self) -> &[f64] {
        &self.lumped_masses
    }

    /// Fitted Rayleigh `(α, β)`.
    pub fn rayleigh(&self) -> (f64, f64) {
        self.rayleigh
    }

    /// Undamped circular frequencies (rad/s) of the nominal model, ascending.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Free-DOF index of a global DOF, if unrestrained.
    pub fn free_dof(&self, global: usize) -> Option<usize> {
        self.free_index.get(global).copied().flatten()
    }

    /// Stiffness over all `2N` global DOFs, before removing restraints.
    pub fn unrestrained_stiffness(&self) -> Result<DMatrix<f64>> {
        let ng = 2 * self.geometry.nodes.len();
        let mut k = DMatrix::zeros(ng, ng);
        for e in 0..self.n_members() {
            let ea = self.elastic_modulus * self.geometry.members[e].area;
            super::add_scaled(&mut k, ea, &unit_member_stiffness(&self.geometry, e)?);
        }
        Ok(k)
    }

    /// Row `r` over free displacements with `ε_e = r · u`.
    pub fn strain_row(&self, e: usize) -> Result<DVector<f64>> {
        if e >= self.n_members() {
            return Err(Error::MapMismatch(format!(
                "member {e} out of range for {} members",
                self.n_members()
            )));
        }
        let (length, c, s) = member_frame(&self.geometry, e)?;
        let t = [-c, -s, c, s];
        let mut row = DVector::zeros(self.system.n_dof());
        for (a, d) in member_dofs(&self.geometry.members[e]).into_iter().enumerate() {
            if let Some(i) = self.free_index[d] {
                row[i] += t[a] / length;
            }
        }
        Ok(row)
    }
}
