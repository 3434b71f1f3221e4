//! Newton-family solvers for stage systems.
//!
//! Four variants share one outer loop: exact-Jacobian Newton (direct or
//! GMRES inner solves), the method of Newton-type that drops the
//! entropy-producing part of the Jacobian, and inexact Newton with a line
//! search that restores the quadratic entropy after every iteration.
//!
//! Residuals are measured in the quadrature-weighted L2 norm of the stage
//! system and the stopping rule is `‖F(Uᵏ)‖ ≤ abs_tol + rel_tol·‖F(U⁰)‖`.

use crate::integrators::StageSystem;
use crate::linalg::{dot, gmres, norm2, LinalgError, LuFactorization, Matrix};
use crate::semidisc::SemiDiscretization;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    /// Dense LU of the assembled Jacobian.
    Direct,
    /// Unrestarted matrix-free GMRES; `max_dim` defaults to the system size.
    Gmres { max_dim: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forcing {
    Fixed(f64),
    EisenstatWalker { gamma: f64, eta_max: f64 },
}

impl Forcing {
    pub fn eisenstat_walker() -> Self {
        Forcing::EisenstatWalker {
            gamma: 0.9,
            eta_max: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonVariant {
    Newton,
    /// Modified Jacobian without the entropy-producing part of `f'`.
    NewtonType,
    /// Newton direction followed by the entropy-restoring line search.
    InexactEntropy,
}

impl NewtonVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            NewtonVariant::Newton => "newton",
            NewtonVariant::NewtonType => "newton_type",
            NewtonVariant::InexactEntropy => "inexact_entropy",
        }
    }
}

impl std::str::FromStr for NewtonVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "newton" => Ok(NewtonVariant::Newton),
            "newton_type" | "newton-type" => Ok(NewtonVariant::NewtonType),
            "inexact_entropy" | "inexact-entropy" => Ok(NewtonVariant::InexactEntropy),
            other => Err(format!("unknown solver variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: NewtonVariant,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub linear_solver: LinearSolver,
    pub forcing: Forcing,
    /// Return the last iterate instead of failing when `max_iters` is hit.
    pub accept_unconverged: bool,
    pub record_iterates: bool,
}

impl SolverConfig {
    /// Exact Newton with dense direct inner solves.
    pub fn newton(abs_tol: f64, rel_tol: f64, max_iters: usize) -> Self {
        Self {
            variant: NewtonVariant::Newton,
            abs_tol,
            rel_tol,
            max_iters,
            linear_solver: LinearSolver::Direct,
            forcing: Forcing::Fixed(0.0),
            accept_unconverged: false,
            record_iterates: false,
        }
    }

    /// Newton-GMRES with Eisenstat-Walker forcing (γ, η_max) = (0.9, 0.9).
    pub fn newton_gmres(abs_tol: f64, rel_tol: f64, max_iters: usize) -> Self {
        Self {
            linear_solver: LinearSolver::Gmres { max_dim: None },
            forcing: Forcing::eisenstat_walker(),
            ..Self::newton(abs_tol, rel_tol, max_iters)
        }
    }

    /// Exactly `k` iterations of `variant` regardless of the residual.
    pub fn fixed_iterations(variant: NewtonVariant, k: usize) -> Self {
        Self {
            variant,
            accept_unconverged: true,
            record_iterates: true,
            ..Self::newton(0.0, 0.0, k)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.abs_tol >= 0.0 && self.rel_tol >= 0.0) {
            return Err("tolerances must be non-negative".into());
        }
        if self.abs_tol == 0.0 && self.rel_tol == 0.0 {
            return Err("abs_tol and rel_tol must not both be zero".into());
        }
        match self.forcing {
            Forcing::Fixed(eta) if !(0.0..1.0).contains(&eta) => {
                Err(format!("fixed forcing term {eta} outside [0, 1)"))
            }
            Forcing::EisenstatWalker { gamma, eta_max }
                if !(gamma > 0.0 && gamma <= 1.0 && eta_max > 0.0 && eta_max < 1.0) =>
            {
                Err(format!("invalid Eisenstat-Walker parameters ({gamma}, {eta_max})"))
            }
            _ => Ok(()),
        }
    }

    fn stop_threshold(&self, r0: f64) -> f64 {
        self.abs_tol + self.rel_tol * r0
    }
}

/// Per-iteration record of a solve. Index `k` refers to iterate `Uᵏ`;
/// step-level entries (`step_norms`, `forcing_terms`, ...) have one entry
/// less than `residual_norms`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub residual_norms: Vec<f64>,
    /// Monitored functional evaluated at the update induced by each iterate.
    pub update_functional: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub forcing_terms: Vec<f64>,
    pub linear_iterations: Vec<usize>,
    /// Line-search parameters (inexact entropy variant only).
    pub alphas: Vec<f64>,
    /// Newton steps `ΔU = U^{k+1}_newton − Uᵏ` before any line search.
    pub steps: Vec<Vec<f64>>,
    pub iterates: Vec<Vec<f64>>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
        trace: Box<IterationTrace>,
    },
    #[error("linear solve failed at iteration {iteration}: {source}")]
    Linear {
        iteration: usize,
        source: LinalgError,
        trace: Box<IterationTrace>,
    },
    #[error("GMRES stagnated at iteration {iteration} (relative residual {relative_residual:.3e})")]
    Stagnation {
        iteration: usize,
        relative_residual: f64,
        trace: Box<IterationTrace>,
    },
    #[error("non-finite residual at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        trace: Box<IterationTrace>,
    },
    #[error("degenerate step: ‖ΔU‖² = {0:.3e}")]
    DegenerateStep(f64),
    #[error("{0}")]
    Unsupported(String),
}

impl SolveError {
    pub fn trace(&self) -> Option<&IterationTrace> {
        match self {
            SolveError::MaxIterations { trace, .. }
            | SolveError::Linear { trace, .. }
            | SolveError::Stagnation { trace, .. }
            | SolveError::NonFinite { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub trace: IterationTrace,
    pub converged: bool,
}

/// Eisenstat-Walker forcing term ("choice 2" with safeguards) for the next
/// inner solve, given the residual history so far.
pub fn eisenstat_walker_forcing(trace: &IterationTrace, cfg: &SolverConfig) -> f64 {
    let (gamma, eta_max) = match cfg.forcing {
        Forcing::EisenstatWalker { gamma, eta_max } => (gamma, eta_max),
        Forcing::Fixed(eta) => return eta,
    };
    let res = &trace.residual_norms;
    let k = res.len().saturating_sub(1);
    if k == 0 {
        return eta_max;
    }
    let (rk, rkm1) = (res[k], res[k - 1]);
    let candidate = gamma * (rk / rkm1).powi(2);
    let prev = trace.forcing_terms.last().copied().unwrap_or(eta_max);
    let safeguard = gamma * prev * prev;
    let mut eta = if safeguard > 0.1 {
        candidate.max(safeguard)
    } else {
        candidate
    };
    eta = eta.min(eta_max);
    // do not solve more accurately than the outer stopping test can resolve
    let stop = cfg.stop_threshold(res[0]);
    if rk > 0.0 {
        eta = eta.max(0.5 * stop / rk);
    }
    eta.min(eta_max)
}

/// Non-trivial root `α` of `(Uᵏ + αΔU)ᵀ(Uᵏ + αΔU − uⁿ) = 0` given that `Uᵏ`
/// already satisfies the condition.
pub fn alpha_entropy_root(delta: &[f64], trial: &[f64], current: &[f64], u_n: &[f64]) -> Result<f64, SolveError> {
    let dd = dot(delta, delta);
    if dd < 1e-28 {
        return Err(SolveError::DegenerateStep(dd));
    }
    debug_assert!(
        {
            let diff: Vec<f64> = current.iter().zip(u_n).map(|(a, b)| a - b).collect();
            let c = dot(current, &diff);
            c.abs() <= 1e-8 * (1.0 + dot(current, current))
        },
        "alpha_entropy_root: current iterate violates the entropy condition"
    );
    let diff: Vec<f64> = current.iter().zip(u_n).map(|(a, b)| a - b).collect();
    Ok(-(dot(delta, current) + dot(trial, &diff)) / dd)
}

fn linear_system_failure(iteration: usize, source: LinalgError, trace: &IterationTrace) -> SolveError {
    SolveError::Linear {
        iteration,
        source,
        trace: Box::new(trace.clone()),
    }
}

/// Solves `sys` from `x0` with the variant and linear solver in `cfg`.
pub fn solve(sys: &dyn StageSystem, cfg: &SolverConfig, x0: &[f64]) -> Result<Solution, SolveError> {
    let m = sys.unknowns();
    if x0.len() != m {
        return Err(SolveError::Unsupported(format!(
            "initial guess has {} entries, system has {m}",
            x0.len()
        )));
    }
    if cfg.variant == NewtonVariant::InexactEntropy
        && !sys.scheme().is_some_and(|s| s.is_implicit_midpoint())
    {
        return Err(SolveError::Unsupported(
            "the entropy line search is defined for implicit-midpoint stage systems".into(),
        ));
    }

    let mut trace = IterationTrace::default();
    let mut x = x0.to_vec();
    let mut r = sys.residual(&x);
    let mut rn = sys.norm(&r);
    let record = |trace: &mut IterationTrace, x: &[f64], rn: f64| {
        trace.residual_norms.push(rn);
        if let Some(f) = sys.monitor() {
            trace.update_functional.push(f.eval(&sys.update(x)));
        }
        if cfg.record_iterates {
            trace.iterates.push(x.to_vec());
        }
    };
    record(&mut trace, &x, rn);
    if !rn.is_finite() {
        return Err(SolveError::NonFinite { iteration: 0, trace: Box::new(trace) });
    }
    let threshold = cfg.stop_threshold(rn);

    for k in 0.. {
        if rn <= threshold {
            return Ok(Solution { x, trace, converged: true });
        }
        if k == cfg.max_iters {
            if cfg.accept_unconverged {
                return Ok(Solution { x, trace, converged: false });
            }
            return Err(SolveError::MaxIterations {
                iterations: k,
                residual: rn,
                last_iterate: x,
                trace: Box::new(trace),
            });
        }

        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let (delta, eta, lin_iters) = match (cfg.variant, cfg.linear_solver) {
            (NewtonVariant::NewtonType, solver) => {
                let jm = sys.modified_jacobian_matrix(&x).ok_or_else(|| {
                    SolveError::Unsupported("system has no entropy-neutral Jacobian splitting".into())
                })?;
                linear_step(&jm, &rhs, solver, k, &mut trace, cfg)?
            }
            (_, LinearSolver::Direct) => {
                let jm = sys.jacobian_matrix(&x);
                linear_step(&jm, &rhs, LinearSolver::Direct, k, &mut trace, cfg)?
            }
            (_, LinearSolver::Gmres { max_dim }) => {
                let eta = eisenstat_walker_forcing(&trace, cfg);
                let dim = max_dim.unwrap_or(m).min(m);
                let (dx, rep) = gmres(
                    |v, out| sys.jacobian_apply_into(&x, v, out),
                    &rhs,
                    &vec![0.0; m],
                    eta,
                    dim,
                );
                if !rep.converged && rep.relative_residual >= 1.0 - 1e-12 {
                    return Err(SolveError::Stagnation {
                        iteration: k,
                        relative_residual: rep.relative_residual,
                        trace: Box::new(trace),
                    });
                }
                (dx, eta, rep.iterations)
            }
        };

        trace.step_norms.push(sys.norm(&delta));
        trace.forcing_terms.push(eta);
        trace.linear_iterations.push(lin_iters);
        if cfg.record_iterates {
            trace.steps.push(delta.clone());
        }

        match cfg.variant {
            NewtonVariant::InexactEntropy => {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
                match alpha_entropy_root(&delta, &trial, &x, sys.state()) {
                    Ok(alpha) => {
                        trace.alphas.push(alpha);
                        for (xi, di) in x.iter_mut().zip(&delta) {
                            *xi += alpha * di;
                        }
                    }
                    // zero step: the iterate cannot move any more
                    Err(SolveError::DegenerateStep(_)) => {
                        trace.step_norms.pop();
                        trace.forcing_terms.pop();
                        trace.linear_iterations.pop();
                        if cfg.record_iterates {
                            trace.steps.pop();
                        }
                        return Ok(Solution { x, trace, converged: true });
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => {
                for (xi, di) in x.iter_mut().zip(&delta) {
                    *xi += di;
                }
            }
        }

        r = sys.residual(&x);
        rn = sys.norm(&r);
        record(&mut trace, &x, rn);
        if !rn.is_finite() {
            return Err(SolveError::NonFinite { iteration: k + 1, trace: Box::new(trace) });
        }
    }
    unreachable!("the iteration loop only exits by returning")
}

fn linear_step(
    jm: &Matrix,
    rhs: &[f64],
    solver: LinearSolver,
    k: usize,
    trace: &mut IterationTrace,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64, usize), SolveError> {
    match solver {
        LinearSolver::Direct => {
            let dx = LuFactorization::new(jm)
                .and_then(|lu| lu.solve(rhs))
                .map_err(|e| linear_system_failure(k, e, trace))?;
            Ok((dx, 0.0, 1))
        }
        LinearSolver::Gmres { max_dim } => {
            let eta = eisenstat_walker_forcing(trace, cfg);
            let m = rhs.len();
            let (dx, rep) = gmres(
                |v, out| jm.matvec_into(v, out),
                rhs,
                &vec![0.0; m],
                eta,
                max_dim.unwrap_or(m).min(m),
            );
            if !rep.converged && rep.relative_residual >= 1.0 - 1e-12 {
                return Err(SolveError::Stagnation {
                    iteration: k,
                    relative_residual: rep.relative_residual,
                    trace: Box::new(trace.clone()),
                });
            }
            Ok((dx, eta, rep.iterations))
        }
    }
}

fn with_variant(cfg: &SolverConfig, variant: NewtonVariant) -> SolverConfig {
    SolverConfig {
        variant,
        ..cfg.clone()
    }
}

/// Exact-Jacobian Newton with the linear solver of `cfg`.
pub fn newton_solve(sys: &dyn StageSystem, cfg: &SolverConfig, x0: &[f64]) -> Result<Solution, SolveError> {
    solve(sys, &with_variant(cfg, NewtonVariant::Newton), x0)
}

/// Newton-GMRES; `cfg.linear_solver` must be GMRES.
pub fn newton_gmres_solve(sys: &dyn StageSystem, cfg: &SolverConfig, x0: &[f64]) -> Result<Solution, SolveError> {
    if !matches!(cfg.linear_solver, LinearSolver::Gmres { .. }) {
        return Err(SolveError::Unsupported(
            "newton_gmres_solve needs a GMRES linear solver".into(),
        ));
    }
    newton_solve(sys, cfg, x0)
}

/// Method of Newton-type: iterations with the modified Jacobian
/// `I − Δt A⊗f̃'` whose updates keep the quadratic entropy.
pub fn newton_type_solve(sys: &dyn StageSystem, cfg: &SolverConfig, x0: &[f64]) -> Result<Solution, SolveError> {
    solve(sys, &with_variant(cfg, NewtonVariant::NewtonType), x0)
}

/// Inexact Newton: Newton direction, then the non-trivial entropy-restoring
/// step length from [`alpha_entropy_root`].
pub fn inexact_newton_entropy(sys: &dyn StageSystem, cfg: &SolverConfig, x0: &[f64]) -> Result<Solution, SolveError> {
    solve(sys, &with_variant(cfg, NewtonVariant::InexactEntropy), x0)
}

/// Entropy change of the midpoint update after a partial Newton solve of
/// split-form Burgers: `−2ΔxΔt ΔUᵀM̂ΔU` with `M̂ = diag(DUᵏ) + D diag(Uᵏ)`
/// at the previous iterate `Uᵏ` and the last Newton step `ΔU`.
pub fn midpoint_newton_entropy_error(
    sd: &SemiDiscretization,
    dt: f64,
    previous: &[f64],
    delta: &[f64],
) -> f64 {
    let m_hat = sd.burgers_split_matrix(previous);
    -2.0 * sd.grid().dx() * dt * dot(delta, &m_hat.matvec(delta))
}

/// Stage-block analogue for a stacked Runge-Kutta system with weights `b`:
/// `−2ΔtΔx ΔUᵀ[(B⊗D)diag(Uᵏ) + diag((B⊗D)Uᵏ)]ΔU`.
pub fn stacked_newton_entropy_error(
    sd: &SemiDiscretization,
    b: &[f64],
    dt: f64,
    previous: &[f64],
    delta: &[f64],
) -> f64 {
    let n = sd.grid().n;
    let d = sd.d1().matrix();
    let mut total = 0.0;
    for (i, bi) in b.iter().enumerate() {
        let u = &previous[i * n..(i + 1) * n];
        let du = &delta[i * n..(i + 1) * n];
        // ΔUᵀ D diag(U) ΔU + ΔUᵀ diag(DU) ΔU
        let udu: Vec<f64> = u.iter().zip(du).map(|(a, b)| a * b).collect();
        let d_udu = d.matvec(&udu);
        let d_u = d.matvec(u);
        let q: f64 = (0..n).map(|j| du[j] * d_udu[j] + du[j] * du[j] * d_u[j]).sum();
        total += bi * q;
    }
    -2.0 * dt * sd.grid().dx() * total
}

/// Residual of the entropy condition `UᵀU − Uᵀuⁿ` for a midpoint stage.
pub fn midpoint_entropy_condition(stage: &[f64], u_n: &[f64]) -> f64 {
    let diff: Vec<f64> = stage.iter().zip(u_n).map(|(a, b)| a - b).collect();
    dot(stage, &diff) / (1.0 + norm2(stage).powi(2))
}
