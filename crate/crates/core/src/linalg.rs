//! Dense linear-algebra helpers shared by the models and the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Starting jitter, relative to each diagonal entry.
const JITTER_START: f64 = 1e-12;
/// Largest relative jitter tried before giving up.
const JITTER_MAX: f64 = 1e-6;

/// Replaces `p` by `(p + pᵀ) / 2`.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let mut s = p.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Which triangular square root to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FactorOrder {
    /// `P = L Lᵀ` with `L` lower triangular.
    #[default]
    Lower,
    /// `P = U Uᵀ` with `U` upper triangular (Cholesky of the index-reversed matrix).
    /// Column `j` of `U` only touches rows `0..=j`.
    Upper,
}

/// Cholesky-type square root of a symmetric covariance.
///
/// The matrix is symmetrized first. When the factorization fails, a jitter of
/// `ε·Pᵢᵢ` is added to each diagonal entry, starting at `ε = 1e-12` and
/// growing tenfold up to `1e-6`.
pub fn conditioned_sqrt(p: &DMatrix<f64>, order: FactorOrder) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::DimensionMismatch(format!("covariance is {}x{}", n, p.ncols())));
    }
    let mut base = p.clone();
    symmetrize(&mut base);
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: f64::NAN,
        });
    }
    if order == FactorOrder::Upper {
        base = reverse(&base);
    }

    let mean_diag = (0..n).map(|i| base[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let mut eps = 0.0;
    loop {
        let mut m = base.clone();
        if eps > 0.0 {
            for i in 0..n {
                let d = base[(i, i)].abs();
                m[(i, i)] += eps * if d > 0.0 { d } else { mean_diag.max(f64::MIN_POSITIVE) };
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            let l = ch.l();
            return Ok(match order {
                FactorOrder::Lower => l,
                FactorOrder::Upper => reverse(&l),
            });
        }
        eps = if eps == 0.0 { JITTER_START } else { eps * 10.0 };
        if eps > JITTER_MAX * 1.000_001 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eigenvalue(p),
            });
        }
    }
}

/// `J A J` where `J` is the exchange (index-reversal) matrix.
fn reverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    DMatrix::from_fn(r, c, |i, j| a[(r - 1 - i, c - 1 - j)])
}

/// Eigenvalues `λ` of `K φ = λ M φ` for symmetric `K` and SPD `M`, ascending.
pub fn generalized_eigenvalues(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?
        .l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("mass factor".into()))?;
    let mut a = &l_inv * k * l_inv.transpose();
    symmetrize(&mut a);
    let mut vals: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Exact discretization of `ẋ = A x + B u` over a step of length `dt`
/// when `u` varies linearly across the step (first-order hold):
///
/// `x⁺ = Φ x + Γ_hold u₀ + Γ_ramp (u₁ − u₀)`.
///
/// With `u₁ = u₀` this reduces to the zero-order-hold map.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub transition: DMatrix<f64>,
    pub hold: DMatrix<f64>,
    pub ramp: DMatrix<f64>,
}

impl Discretization {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        let size = n + 2 * m;
        let mut w = DMatrix::zeros(size, size);
        w.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
        w.view_mut((0, n), (n, m)).copy_from(&(b * dt));
        for i in 0..m {
            w[(n + i, n + m + i)] = dt;
        }
        let e = w.exp();
        let transition = e.view((0, 0), (n, n)).into_owned();
        let hold = e.view((0, n), (n, m)).into_owned();
        let ramp = e.view((0, n + m), (n, m)).into_owned() / dt;
        Self { transition, hold, ramp }
    }

    pub fn apply(&self, x: &DVector<f64>, u0: &DVector<f64>, u1: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.transition * x;
        if !self.hold.is_empty() {
            out += &self.hold * u0;
            out += &self.ramp * (u1 - u0);
        }
        out
    }
}

/// Solves `A x = b` for a general square `A` via LU.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular(what.to_string()))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(a.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(what.to_string()))
}
