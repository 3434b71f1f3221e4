//! Implicit one-step methods expressed as nonlinear stage systems.
//!
//! Implicit Runge-Kutta methods (implicit midpoint, three-stage Lobatto IIIC)
//! are written in stacked form `F(U) = U − 1⊗uⁿ − Δt (A⊗I) f(U)` over all
//! stages at once. The AVF method for up-to-quartic Hamiltonians is written
//! in its Simpson-rule form with the new state as unknown. [`step`] solves a
//! stage system, forms the update and optionally relaxes it.

use crate::linalg::{axpy, Matrix};
use crate::nonlinear::{self, IterationTrace, SolveError, SolverConfig};
use crate::relaxation::{self, EntropyTarget, RelaxationError, RelaxationMode, RelaxationPolicy};
use crate::semidisc::{Functional, OdeRhs};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("state has {got} entries, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RkFlags {
    pub symplectic: bool,
    pub b_nonneg: bool,
    pub sbp: bool,
}

/// Butcher data of an implicit Runge-Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct RkScheme {
    name: &'static str,
    a: Matrix,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Stage-to-update vector with `Aᵀv = b`.
    v: Option<Vec<f64>>,
    flags: RkFlags,
}

impl RkScheme {
    pub fn implicit_midpoint() -> Self {
        Self {
            name: "midpoint",
            a: Matrix::from_rows(&[vec![0.5]]),
            b: vec![1.0],
            c: vec![0.5],
            v: Some(vec![2.0]),
            flags: RkFlags {
                symplectic: true,
                b_nonneg: true,
                sbp: false,
            },
        }
    }

    pub fn lobatto_iiic3() -> Self {
        Self {
            name: "lobatto_iiic",
            a: Matrix::from_rows(&[
                vec![1.0 / 6.0, -1.0 / 3.0, 1.0 / 6.0],
                vec![1.0 / 6.0, 5.0 / 12.0, -1.0 / 12.0],
                vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            ]),
            b: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 1.0],
            v: Some(vec![0.0, 0.0, 1.0]),
            flags: RkFlags {
                symplectic: false,
                b_nonneg: true,
                sbp: true,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn v(&self) -> Option<&[f64]> {
        self.v.as_deref()
    }

    pub fn flags(&self) -> RkFlags {
        self.flags
    }

    pub fn is_implicit_midpoint(&self) -> bool {
        self.stages() == 1 && self.a[(0, 0)] == 0.5 && self.b[0] == 1.0
    }
}

/// A nonlinear system whose solution defines one time step.
pub trait StageSystem {
    fn ode(&self) -> &dyn OdeRhs;

    fn unknowns(&self) -> usize;

    /// Previous state `uⁿ`.
    fn state(&self) -> &[f64];

    fn dt(&self) -> f64;

    fn residual_into(&self, x: &[f64], out: &mut [f64]);

    fn jacobian_apply_into(&self, x: &[f64], v: &[f64], out: &mut [f64]);

    fn jacobian_matrix(&self, x: &[f64]) -> Matrix;

    /// Jacobian with the entropy-producing part of `f'` removed, if the
    /// underlying ODE provides that splitting.
    fn modified_jacobian_matrix(&self, x: &[f64]) -> Option<Matrix>;

    fn initial_guess(&self) -> Vec<f64>;

    /// New state `u^{n+1}` induced by the stage unknowns.
    fn update(&self, x: &[f64]) -> Vec<f64>;

    /// Per-stage vectors (Runge-Kutta systems only).
    fn stage_values(&self, _x: &[f64]) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn scheme(&self) -> Option<&RkScheme> {
        None
    }

    /// Functional tracked on the would-be update at each solver iteration.
    fn monitor(&self) -> Option<&dyn Functional> {
        None
    }

    /// Quadrature-weighted L2 norm used for residuals.
    fn norm(&self, r: &[f64]) -> f64 {
        (self.ode().norm_weight() * r.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.unknowns()];
        self.residual_into(x, &mut out);
        out
    }
}

fn check_inputs(ode: &dyn OdeRhs, u_n: &[f64], dt: f64) -> Result<(), IntegratorError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(IntegratorError::InvalidStep(dt));
    }
    if u_n.len() != ode.dim() {
        return Err(IntegratorError::DimensionMismatch {
            expected: ode.dim(),
            got: u_n.len(),
        });
    }
    Ok(())
}

/// Stacked stage equations of an implicit Runge-Kutta method.
pub struct RkStageSystem<'a> {
    ode: &'a dyn OdeRhs,
    scheme: RkScheme,
    u_n: Vec<f64>,
    dt: f64,
    monitor: Option<&'a dyn Functional>,
}

impl<'a> RkStageSystem<'a> {
    pub fn new(ode: &'a dyn OdeRhs, scheme: RkScheme, u_n: &[f64], dt: f64) -> Result<Self, IntegratorError> {
        check_inputs(ode, u_n, dt)?;
        Ok(Self {
            ode,
            scheme,
            u_n: u_n.to_vec(),
            dt,
            monitor: None,
        })
    }

    pub fn with_monitor(mut self, functional: &'a dyn Functional) -> Self {
        self.monitor = Some(functional);
        self
    }

    fn n(&self) -> usize {
        self.u_n.len()
    }

    fn stage_rhs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.chunks(self.n()).map(|y| self.ode.rhs(y)).collect()
    }

    fn assemble(&self, blocks: Vec<Matrix>) -> Matrix {
        let n = self.n();
        let s = self.scheme.stages();
        let a = self.scheme.a();
        let mut m = Matrix::identity(n * s);
        for i in 0..s {
            for (j, blk) in blocks.iter().enumerate() {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                for r in 0..n {
                    let row = &mut m.row_mut(i * n + r)[j * n..(j + 1) * n];
                    axpy(-self.dt * aij, blk.row(r), row);
                }
            }
        }
        m
    }
}

impl StageSystem for RkStageSystem<'_> {
    fn ode(&self) -> &dyn OdeRhs {
        self.ode
    }

    fn unknowns(&self) -> usize {
        self.n() * self.scheme.stages()
    }

    fn state(&self) -> &[f64] {
        &self.u_n
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn residual_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        let s = self.scheme.stages();
        let f = self.stage_rhs(x);
        for i in 0..s {
            let oi = &mut out[i * n..(i + 1) * n];
            for ((o, y), u) in oi.iter_mut().zip(&x[i * n..(i + 1) * n]).zip(&self.u_n) {
                *o = y - u;
            }
            for (j, fj) in f.iter().enumerate() {
                let aij = self.scheme.a[(i, j)];
                if aij != 0.0 {
                    axpy(-self.dt * aij, fj, oi);
                }
            }
        }
    }

    fn jacobian_apply_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n();
        let s = self.scheme.stages();
        let mut jv = vec![vec![0.0; n]; s];
        for (j, jvj) in jv.iter_mut().enumerate() {
            self.ode
                .jacobian_apply_into(&x[j * n..(j + 1) * n], &v[j * n..(j + 1) * n], jvj);
        }
        out.copy_from_slice(v);
        for i in 0..s {
            let oi = &mut out[i * n..(i + 1) * n];
            for (j, jvj) in jv.iter().enumerate() {
                let aij = self.scheme.a[(i, j)];
                if aij != 0.0 {
                    axpy(-self.dt * aij, jvj, oi);
                }
            }
        }
    }

    fn jacobian_matrix(&self, x: &[f64]) -> Matrix {
        let blocks = x.chunks(self.n()).map(|y| self.ode.jacobian_matrix(y)).collect();
        self.assemble(blocks)
    }

    fn modified_jacobian_matrix(&self, x: &[f64]) -> Option<Matrix> {
        let blocks: Option<Vec<Matrix>> = x
            .chunks(self.n())
            .map(|y| self.ode.neutral_jacobian_matrix(y))
            .collect();
        blocks.map(|b| self.assemble(b))
    }

    fn initial_guess(&self) -> Vec<f64> {
        self.u_n.repeat(self.scheme.stages())
    }

    fn update(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        match self.scheme.v() {
            Some(v) => {
                let vsum: f64 = v.iter().sum();
                let mut u: Vec<f64> = self.u_n.iter().map(|x| (1.0 - vsum) * x).collect();
                for (vi, y) in v.iter().zip(x.chunks(n)) {
                    if *vi != 0.0 {
                        axpy(*vi, y, &mut u);
                    }
                }
                u
            }
            None => {
                let mut u = self.u_n.clone();
                for (bi, fi) in self.scheme.b().iter().zip(self.stage_rhs(x)) {
                    axpy(self.dt * bi, &fi, &mut u);
                }
                u
            }
        }
    }

    fn stage_values(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        Some(x.chunks(self.n()).map(<[f64]>::to_vec).collect())
    }

    fn scheme(&self) -> Option<&RkScheme> {
        Some(&self.scheme)
    }

    fn monitor(&self) -> Option<&dyn Functional> {
        self.monitor
    }
}

/// AVF in Simpson-rule form; the unknown is `u^{n+1}` itself.
pub struct AvfSystem<'a> {
    ode: &'a dyn OdeRhs,
    u_n: Vec<f64>,
    f_n: Vec<f64>,
    dt: f64,
    monitor: Option<&'a dyn Functional>,
}

impl<'a> AvfSystem<'a> {
    pub fn new(ode: &'a dyn OdeRhs, u_n: &[f64], dt: f64) -> Result<Self, IntegratorError> {
        check_inputs(ode, u_n, dt)?;
        Ok(Self {
            ode,
            f_n: ode.rhs(u_n),
            u_n: u_n.to_vec(),
            dt,
            monitor: None,
        })
    }

    pub fn with_monitor(mut self, functional: &'a dyn Functional) -> Self {
        self.monitor = Some(functional);
        self
    }

    fn midpoint(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.u_n).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

impl StageSystem for AvfSystem<'_> {
    fn ode(&self) -> &dyn OdeRhs {
        self.ode
    }

    fn unknowns(&self) -> usize {
        self.u_n.len()
    }

    fn state(&self) -> &[f64] {
        &self.u_n
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn residual_into(&self, x: &[f64], out: &mut [f64]) {
        let fm = self.ode.rhs(&self.midpoint(x));
        let f1 = self.ode.rhs(x);
        let h = self.dt / 6.0;
        for i in 0..out.len() {
            out[i] = x[i] - self.u_n[i] - h * (self.f_n[i] + 4.0 * fm[i] + f1[i]);
        }
    }

    fn jacobian_apply_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut jm = vec![0.0; n];
        let mut j1 = vec![0.0; n];
        self.ode.jacobian_apply_into(&self.midpoint(x), v, &mut jm);
        self.ode.jacobian_apply_into(x, v, &mut j1);
        let h = self.dt / 6.0;
        for i in 0..n {
            // d/dx f((x + uⁿ)/2) = ½ f'
            out[i] = v[i] - h * (2.0 * jm[i] + j1[i]);
        }
    }

    fn jacobian_matrix(&self, x: &[f64]) -> Matrix {
        let n = x.len();
        let mut m = Matrix::identity(n);
        let h = self.dt / 6.0;
        m.add_scaled(-2.0 * h, &self.ode.jacobian_matrix(&self.midpoint(x)));
        m.add_scaled(-h, &self.ode.jacobian_matrix(x));
        m
    }

    fn modified_jacobian_matrix(&self, x: &[f64]) -> Option<Matrix> {
        let n = x.len();
        let jm = self.ode.neutral_jacobian_matrix(&self.midpoint(x))?;
        let j1 = self.ode.neutral_jacobian_matrix(x)?;
        let mut m = Matrix::identity(n);
        let h = self.dt / 6.0;
        m.add_scaled(-2.0 * h, &jm);
        m.add_scaled(-h, &j1);
        Some(m)
    }

    fn initial_guess(&self) -> Vec<f64> {
        self.u_n.clone()
    }

    fn update(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn monitor(&self) -> Option<&dyn Functional> {
        self.monitor
    }
}

/// `U − uⁿ − (Δt/2) f(U)`; update `2U − uⁿ`.
pub fn midpoint_stage_system<'a>(
    ode: &'a dyn OdeRhs,
    u_n: &[f64],
    dt: f64,
) -> Result<RkStageSystem<'a>, IntegratorError> {
    RkStageSystem::new(ode, RkScheme::implicit_midpoint(), u_n, dt)
}

/// Stacked three-stage Lobatto IIIC system over `3n` unknowns; the update is
/// the last stage.
pub fn lobatto_iiic_stage_system<'a>(
    ode: &'a dyn OdeRhs,
    u_n: &[f64],
    dt: f64,
) -> Result<RkStageSystem<'a>, IntegratorError> {
    RkStageSystem::new(ode, RkScheme::lobatto_iiic3(), u_n, dt)
}

pub fn avf_stage_system<'a>(ode: &'a dyn OdeRhs, u_n: &[f64], dt: f64) -> Result<AvfSystem<'a>, IntegratorError> {
    AvfSystem::new(ode, u_n, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Midpoint,
    LobattoIIIC,
    Avf,
}

impl SchemeKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SchemeKind::Midpoint => "midpoint",
            SchemeKind::LobattoIIIC => "lobatto_iiic",
            SchemeKind::Avf => "avf",
        }
    }

    /// Classical order of the exactly solved method.
    pub fn order(&self) -> usize {
        match self {
            SchemeKind::Midpoint | SchemeKind::Avf => 2,
            SchemeKind::LobattoIIIC => 4,
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "midpoint" => Ok(SchemeKind::Midpoint),
            "lobatto_iiic" | "lobatto-iiic" | "lobatto" => Ok(SchemeKind::LobattoIIIC),
            "avf" => Ok(SchemeKind::Avf),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

/// Builds the stage system of `kind` for one step from `u_n`.
pub fn stage_system<'a>(
    kind: SchemeKind,
    ode: &'a dyn OdeRhs,
    u_n: &[f64],
    dt: f64,
    monitor: Option<&'a dyn Functional>,
) -> Result<Box<dyn StageSystem + 'a>, IntegratorError> {
    Ok(match kind {
        SchemeKind::Midpoint | SchemeKind::LobattoIIIC => {
            let scheme = if kind == SchemeKind::Midpoint {
                RkScheme::implicit_midpoint()
            } else {
                RkScheme::lobatto_iiic3()
            };
            let mut sys = RkStageSystem::new(ode, scheme, u_n, dt)?;
            sys.monitor = monitor;
            Box::new(sys)
        }
        SchemeKind::Avf => {
            let mut sys = AvfSystem::new(ode, u_n, dt)?;
            sys.monitor = monitor;
            Box::new(sys)
        }
    })
}

/// Relaxation policy plus the functional it acts on.
#[derive(Clone, Copy)]
pub struct Relaxation<'f> {
    pub policy: RelaxationPolicy,
    pub functional: Option<&'f dyn Functional>,
}

impl<'f> Relaxation<'f> {
    pub fn off() -> Self {
        Self {
            policy: RelaxationPolicy::off(),
            functional: None,
        }
    }

    pub fn new(policy: RelaxationPolicy, functional: &'f dyn Functional) -> Self {
        Self {
            policy,
            functional: Some(functional),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Relaxed functional before the step, if a functional was supplied.
    pub entropy_before: Option<f64>,
    pub entropy_after: Option<f64>,
    pub gamma: Option<f64>,
    pub wall_time: Duration,
    pub trace: IterationTrace,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub u: Vec<f64>,
    pub t: f64,
    pub report: SolveReport,
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("nonlinear solve failed: {0}")]
    Solver(#[from] SolveError),
    #[error("relaxation failed: {0}")]
    Relaxation(#[from] RelaxationError),
    #[error("relaxation mode {0:?} needs a functional")]
    MissingFunctional(RelaxationMode),
}

/// Solves `sys` from its default initial guess, forms `u^{n+1}` and applies
/// relaxation according to `relax`. Time advances by `γΔt` when relaxed.
pub fn step(
    sys: &dyn StageSystem,
    t_n: f64,
    solver: &SolverConfig,
    relax: &Relaxation<'_>,
) -> Result<StepResult, StepError> {
    let start = Instant::now();
    let u_n = sys.state();
    let dt = sys.dt();
    let x0 = sys.initial_guess();
    let sol = nonlinear::solve(sys, solver, &x0)?;
    let u_next = sys.update(&sol.x);

    let entropy_before = relax.functional.map(|f| f.eval(u_n));
    let (u, t, gamma) = match relax.policy.mode {
        RelaxationMode::Off => (u_next, t_n + dt, None),
        mode => {
            let functional = relax.functional.ok_or(StepError::MissingFunctional(mode))?;
            let target = match relax.policy.target {
                EntropyTarget::Conserve => functional.eval(u_n),
                EntropyTarget::RkEstimate => {
                    let scheme = sys.scheme().ok_or(RelaxationError::NotRungeKutta)?;
                    let stages = sys.stage_values(&sol.x).ok_or(RelaxationError::NotRungeKutta)?;
                    relaxation::eta_estimate_rk(scheme, &stages, functional, sys.ode(), u_n, dt)?
                }
            };
            let gamma = relaxation::relaxation_gamma(&relax.policy, functional, u_n, &u_next, target)?;
            let (t, u) = relaxation::apply_relaxation(t_n, dt, u_n, &u_next, gamma);
            (u, t, Some(gamma))
        }
    };
    let entropy_after = relax.functional.map(|f| f.eval(&u));
    let trace = sol.trace;
    Ok(StepResult {
        u,
        t,
        report: SolveReport {
            newton_iterations: trace.iterations(),
            linear_iterations: trace.linear_iterations.iter().sum(),
            residual_history: trace.residual_norms.clone(),
            converged: sol.converged,
            entropy_before,
            entropy_after,
            gamma,
            wall_time: start.elapsed(),
            trace,
        },
    })
}
