//! Rayleigh damping coefficients from target modal damping ratios.

use crate::error::{Error, Result};

/// Modal damping ratio produced by `C = αM + βK` at circular frequency `omega`.
pub fn modal_ratio(alpha: f64, beta: f64, omega: f64) -> f64 {
    alpha / (2.0 * omega) + beta * omega / 2.0
}

/// Least-squares `(α, β)` so that `α/(2ω) + βω/2 ≈ ratio` at every `ω` in `omegas`.
///
/// With exactly two frequencies the fit is exact.
pub fn fit(omegas: &[f64], ratio: f64) -> Result<(f64, f64)> {
    if omegas.len() < 2 {
        return Err(Error::invalid("n_modes", "Rayleigh fit needs at least two modes"));
    }
    if let Some(w) = omegas.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::invalid("omega", format!("{w} is not positive")));
    }
    // normal equations of [1/(2ω), ω/2] [α β]ᵀ = ξ
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &w in omegas {
        let a = 0.5 / w;
        let b = 0.5 * w;
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        r1 += a * ratio;
        r2 += b * ratio;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= f64::EPSILON * s11 * s22 {
        return Err(Error::Singular(
            "Rayleigh normal equations (repeated frequencies)".into(),
        ));
    }
    Ok(((s22 * r1 - s12 * r2) / det, (s11 * r2 - s12 * r1) / det))
}
