//! Relaxation of a completed time step.
//!
//! Given `uⁿ` and a provisional `u^{n+1}`, relaxation searches along
//! `d = u^{n+1} − uⁿ` for `γ ≈ 1` such that the functional of
//! `u_γ = uⁿ + γd` hits `F(uⁿ) + γ(η_target − F(uⁿ))`; time then advances by
//! `γΔt`. Quadratic functionals admit a closed form, cubic ones reduce to a
//! quadratic after removing the trivial root, and anything else goes through
//! a bracketed scalar root finder.

use crate::integrators::RkScheme;
use crate::linalg::{dot, norm2};
use crate::semidisc::{Functional, OdeRhs};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelaxationMode {
    Off,
    Quadratic,
    Cubic,
    General { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyTarget {
    /// `η_new = F(uⁿ)`.
    Conserve,
    /// `η_new = F(uⁿ) + Δt Σ bᵢ F'(yᵢ) f(yᵢ)`.
    RkEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationPolicy {
    pub mode: RelaxationMode,
    pub target: EntropyTarget,
    pub gamma_bounds: (f64, f64),
    /// Relative floor on `‖u^{n+1} − uⁿ‖` below which `γ = 1`.
    pub degenerate_threshold: f64,
}

impl RelaxationPolicy {
    pub fn new(mode: RelaxationMode) -> Self {
        Self {
            mode,
            target: EntropyTarget::Conserve,
            gamma_bounds: (0.5, 1.5),
            degenerate_threshold: 1e-14,
        }
    }

    pub fn off() -> Self {
        Self::new(RelaxationMode::Off)
    }

    pub fn validate(&self) -> Result<(), RelaxationError> {
        let (lo, hi) = self.gamma_bounds;
        if !(lo < 1.0 && 1.0 < hi) {
            return Err(RelaxationError::InvalidPolicy(format!(
                "gamma bounds ({lo}, {hi}) must contain 1"
            )));
        }
        if let RelaxationMode::General { tol } = self.mode {
            if !(tol > 0.0) {
                return Err(RelaxationError::InvalidPolicy(format!("root tolerance {tol} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("no real relaxation root in ({lo}, {hi})")]
    NoRoot { lo: f64, hi: f64 },
    #[error("relaxation parameter {gamma} outside ({lo}, {hi})")]
    OutOfBounds { gamma: f64, lo: f64, hi: f64 },
    #[error("functional `{0}` is not a homogeneous quadratic")]
    NotQuadratic(String),
    #[error("functional defect {defect:.3e} after relaxation exceeds {bound:.3e}")]
    ConservationCheck { defect: f64, bound: f64 },
    #[error("entropy estimate needs non-negative weights b")]
    NegativeWeight,
    #[error("entropy estimate needs Runge-Kutta stage values")]
    NotRungeKutta,
    #[error("invalid relaxation policy: {0}")]
    InvalidPolicy(String),
}

fn direction(u_n: &[f64], u_next: &[f64]) -> Vec<f64> {
    u_next.iter().zip(u_n).map(|(a, b)| a - b).collect()
}

fn is_degenerate(u_n: &[f64], d: &[f64], threshold: f64) -> bool {
    norm2(d) <= threshold * (1.0 + norm2(u_n))
}

fn along(u_n: &[f64], d: &[f64], gamma: f64) -> Vec<f64> {
    u_n.iter().zip(d).map(|(u, v)| u + gamma * v).collect()
}

/// Closed-form γ for the implicit midpoint rule and the quadratic entropy:
/// `(‖uⁿ‖² − ⟨U, uⁿ⟩)/‖U − uⁿ‖²`, where `U` is the stage.
pub fn gamma_quadratic(u_n: &[f64], stage: &[f64]) -> f64 {
    let diff = direction(u_n, stage);
    if is_degenerate(u_n, &diff, 1e-14) {
        return 1.0;
    }
    (dot(u_n, u_n) - dot(stage, u_n)) / dot(&diff, &diff)
}

/// γ for a homogeneous quadratic `F(u) = ½B(u,u)`:
/// `2(η_target − F(uⁿ) − B(uⁿ,d))/B(d,d)`.
pub fn gamma_quadratic_form(
    functional: &dyn Functional,
    u_n: &[f64],
    u_next: &[f64],
    eta_target: f64,
) -> Result<f64, RelaxationError> {
    let d = direction(u_n, u_next);
    if is_degenerate(u_n, &d, 1e-14) {
        return Ok(1.0);
    }
    let not_quad = || RelaxationError::NotQuadratic(functional.name().to_string());
    let b_nd = functional.bilinear(u_n, &d).ok_or_else(not_quad)?;
    let b_dd = functional.bilinear(&d, &d).ok_or_else(not_quad)?;
    let f_n = functional.eval(u_n);
    Ok(2.0 * (eta_target - f_n - b_nd) / b_dd)
}

/// Real roots of `a + bγ + cγ²`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if c == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-a / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / c, a / q]
}

/// γ for a cubic functional: `p(γ) = F(uⁿ+γd) − F(uⁿ)` is fitted exactly as
/// `a₁γ + a₂γ² + a₃γ³` from `F'(uⁿ)d` and `p(±1)`; after dividing out the
/// trivial root the condition `p(γ) = γδ` is a quadratic whose real root
/// closest to one is returned.
pub fn gamma_cubic(
    functional: &dyn Functional,
    u_n: &[f64],
    u_next: &[f64],
    eta_target: Option<f64>,
    bounds: (f64, f64),
) -> Result<f64, RelaxationError> {
    let d = direction(u_n, u_next);
    if is_degenerate(u_n, &d, 1e-14) {
        return Ok(1.0);
    }
    let f_n = functional.eval(u_n);
    let delta = eta_target.map_or(0.0, |t| t - f_n);
    let a1 = dot(&functional.gradient(u_n), &d);
    let p1 = functional.eval(u_next) - f_n;
    let pm1 = functional.eval(&along(u_n, &d, -1.0)) - f_n;
    let a2 = 0.5 * (p1 + pm1);
    let a3 = 0.5 * (p1 - pm1) - a1;

    let (lo, hi) = bounds;
    let gamma = quadratic_roots(a1 - delta, a2, a3)
        .into_iter()
        .filter(|g| g.is_finite())
        .min_by(|x, y| (x - 1.0).abs().total_cmp(&(y - 1.0).abs()))
        .ok_or(RelaxationError::NoRoot { lo, hi })?;
    if !(gamma > lo && gamma < hi) {
        return Err(RelaxationError::OutOfBounds { gamma, lo, hi });
    }
    let defect = functional.eval(&along(u_n, &d, gamma)) - f_n - gamma * delta;
    let bound = 1e-11 * (1.0 + f_n.abs());
    if defect.abs() > bound {
        return Err(RelaxationError::ConservationCheck { defect: defect.abs(), bound });
    }
    Ok(gamma)
}

/// γ from the scalar equation `F(uⁿ+γd) = F(uⁿ) + γ(η_target − F(uⁿ))`,
/// solved by Illinois regula falsi with bisection safeguard on a sign-change
/// bracket inside `bounds`.
pub fn gamma_general(
    functional: &dyn Functional,
    u_n: &[f64],
    u_next: &[f64],
    eta_target: f64,
    tol: f64,
    bounds: (f64, f64),
) -> Result<f64, RelaxationError> {
    let d = direction(u_n, u_next);
    if is_degenerate(u_n, &d, 1e-14) {
        return Ok(1.0);
    }
    let f_n = functional.eval(u_n);
    let delta = eta_target - f_n;
    let r = |g: f64| functional.eval(&along(u_n, &d, g)) - f_n - g * delta;

    let (lo, hi) = bounds;
    let (r_lo, r_one, r_hi) = (r(lo), r(1.0), r(hi));
    if r_one.abs() <= tol {
        return Ok(1.0);
    }
    let bracket = [(lo, r_lo, hi, r_hi), (lo, r_lo, 1.0, r_one), (1.0, r_one, hi, r_hi)]
        .into_iter()
        .find(|(_, ra, _, rb)| ra.signum() != rb.signum())
        .ok_or(RelaxationError::NoRoot { lo, hi })?;
    let (mut a, mut ra, mut b, mut rb) = bracket;
    if ra.abs() <= tol {
        return Ok(a);
    }
    if rb.abs() <= tol {
        return Ok(b);
    }

    let mut side = 0i8;
    for _ in 0..200 {
        let mut g = (a * rb - b * ra) / (rb - ra);
        if !(g > a && g < b) {
            g = 0.5 * (a + b);
        }
        let rg = r(g);
        if rg.abs() <= tol || (b - a) <= 4.0 * f64::EPSILON * g.abs().max(1.0) {
            return Ok(g);
        }
        if rg.signum() == rb.signum() {
            b = g;
            rb = rg;
            if side == 1 {
                ra *= 0.5;
            }
            side = 1;
        } else {
            a = g;
            ra = rg;
            if side == -1 {
                rb *= 0.5;
            }
            side = -1;
        }
    }
    Ok(if ra.abs() < rb.abs() { a } else { b })
}

/// `F(uⁿ) + Δt Σ bᵢ F'(yᵢ)·f(yᵢ)` from the stage values of a Runge-Kutta step.
pub fn eta_estimate_rk(
    scheme: &RkScheme,
    stages: &[Vec<f64>],
    functional: &dyn Functional,
    ode: &dyn OdeRhs,
    u_n: &[f64],
    dt: f64,
) -> Result<f64, RelaxationError> {
    if scheme.b().iter().any(|&b| b < 0.0) {
        return Err(RelaxationError::NegativeWeight);
    }
    let production: f64 = scheme
        .b()
        .iter()
        .zip(stages)
        .map(|(b, y)| b * dot(&functional.gradient(y), &ode.rhs(y)))
        .sum();
    Ok(functional.eval(u_n) + dt * production)
}

/// `(tⁿ + γΔt, uⁿ + γ(u^{n+1} − uⁿ))`.
pub fn apply_relaxation(t_n: f64, dt: f64, u_n: &[f64], u_next: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let u = u_n
        .iter()
        .zip(u_next)
        .map(|(a, b)| a + gamma * (b - a))
        .collect();
    (t_n + gamma * dt, u)
}

/// Relaxation parameter for `policy`; `Off` yields one.
pub fn relaxation_gamma(
    policy: &RelaxationPolicy,
    functional: &dyn Functional,
    u_n: &[f64],
    u_next: &[f64],
    eta_target: f64,
) -> Result<f64, RelaxationError> {
    let d = direction(u_n, u_next);
    if policy.mode == RelaxationMode::Off || is_degenerate(u_n, &d, policy.degenerate_threshold) {
        return Ok(1.0);
    }
    let bounds = policy.gamma_bounds;
    let gamma = match policy.mode {
        RelaxationMode::Off => unreachable!(),
        RelaxationMode::Quadratic => gamma_quadratic_form(functional, u_n, u_next, eta_target)?,
        RelaxationMode::Cubic => gamma_cubic(functional, u_n, u_next, Some(eta_target), bounds)?,
        RelaxationMode::General { tol } => gamma_general(functional, u_n, u_next, eta_target, tol, bounds)?,
    };
    let (lo, hi) = bounds;
    if !(gamma > lo && gamma < hi) {
        return Err(RelaxationError::OutOfBounds { gamma, lo, hi });
    }
    Ok(gamma)
}
