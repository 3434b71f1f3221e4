//! Exact traveling-wave solutions and the discrete L2 error.

use crate::operators::MassMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("BBM traveling waves need c > 1, got {0}")]
    WaveSpeed(f64),
    #[error("vectors have {left} and {right} entries, mass has {mass}")]
    DimensionMismatch { left: usize, right: usize, mass: usize },
}

/// Reduces `xi` into `[−L/2, L/2)` for the period `L = x_max − x_min`.
pub fn wrap(xi: f64, domain: (f64, f64)) -> f64 {
    let l = domain.1 - domain.0;
    (xi + 0.5 * l).rem_euclid(l) - 0.5 * l
}

fn sech2(z: f64) -> f64 {
    let s = 1.0 / z.cosh();
    s * s
}

/// KdV soliton `(c/2) sech²(√c/2 · (x − ct))`, periodically continued.
pub fn exact_kdv_soliton(x: f64, t: f64, c: f64, domain: (f64, f64)) -> f64 {
    0.5 * c * sech2(0.5 * c.sqrt() * wrap(x - c * t, domain))
}

/// Amplitude `A` and width parameter `K` of the BBM solitary wave.
pub fn bbm_wave_parameters(c: f64) -> Result<(f64, f64), ExactError> {
    if !(c > 1.0) {
        return Err(ExactError::WaveSpeed(c));
    }
    Ok((3.0 * (c - 1.0), 0.5 * (1.0 - 1.0 / c).sqrt()))
}

/// BBM solitary wave `A sech²(K (x − ct))`, periodically continued.
pub fn exact_bbm_wave(x: f64, t: f64, c: f64, domain: (f64, f64)) -> Result<f64, ExactError> {
    let (a, k) = bbm_wave_parameters(c)?;
    Ok(a * sech2(k * wrap(x - c * t, domain)))
}

/// `√(Σ Mᵢ (uᵢ − vᵢ)²)`.
pub fn l2_error(u: &[f64], u_exact: &[f64], mass: &MassMatrix) -> Result<f64, ExactError> {
    if u.len() != u_exact.len() || u.len() != mass.len() {
        return Err(ExactError::DimensionMismatch {
            left: u.len(),
            right: u_exact.len(),
            mass: mass.len(),
        });
    }
    let diff: Vec<f64> = u.iter().zip(u_exact).map(|(a, b)| a - b).collect();
    Ok(mass.norm(&diff))
}
