//! Single-step solver studies on the Burgers reference problem, with the
//! entropy identities evaluated by dense oracles assembled here (independent
//! of the library's own predictions).

use entropic::cli::exact::exact_kdv_soliton;
use entropic::integrators::{
    avf_stage_system, lobatto_iiic_stage_system, midpoint_stage_system, StageSystem,
};
use entropic::linalg::{gmres, lu_solve, norm2, Matrix};
use entropic::nonlinear::{self, Forcing, LinearSolver, NewtonVariant, SolverConfig};
use entropic::operators::OperatorFamily;
use entropic::semidisc::{Equation, Functional, FunctionalKind, Grid, OdeRhs, SemiDiscretization};
use rand::Rng;

pub struct Reference {
    pub sd: SemiDiscretization,
    pub u0: Vec<f64>,
    pub dt: f64,
}

/// Burgers split form, Δx = 0.1 on (−10, 10], c = 2 sech² data, Δt = 0.5.
pub fn burgers_reference() -> Reference {
    burgers_with(200, 0.5, 2.0, 0.0)
}

pub fn burgers_with(n: usize, dt: f64, c: f64, shift: f64) -> Reference {
    let grid = Grid::new(-10.0, 10.0, n);
    let sd = SemiDiscretization::new(Equation::Burgers, grid, OperatorFamily::CentralFd, 4).unwrap();
    let u0 = grid
        .nodes()
        .iter()
        .map(|&x| exact_kdv_soliton(x - shift, 0.0, c, (-10.0, 10.0)))
        .collect();
    Reference { sd, u0, dt }
}

fn entropy(r: &Reference) -> impl Functional + '_ {
    r.sd.functional(FunctionalKind::QuadraticEntropy)
}

fn half_sq(dx: f64, v: &[f64]) -> f64 {
    0.5 * dx * v.iter().map(|x| x * x).sum::<f64>()
}

/// `ΔUᵀ(diag(DU) + D diag(U))ΔU` with `D` taken entrywise from the dense matrix.
pub fn split_form_oracle(d: &Matrix, u: &[f64], du: &[f64]) -> f64 {
    let n = u.len();
    let mut q = 0.0;
    for i in 0..n {
        let mut d_u = 0.0;
        let mut d_udu = 0.0;
        for j in 0..n {
            d_u += d[(i, j)] * u[j];
            d_udu += d[(i, j)] * u[j] * du[j];
        }
        q += du[i] * du[i] * d_u + du[i] * d_udu;
    }
    q
}

fn fixed(variant: NewtonVariant, k: usize) -> SolverConfig {
    SolverConfig::fixed_iterations(variant, k)
}

#[derive(Debug, Clone)]
pub struct NewtonStudy {
    pub residuals: Vec<f64>,
    pub drifts: Vec<f64>,
    pub predicted: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl NewtonStudy {
    pub fn max_identity_error(&self) -> f64 {
        self.drifts
            .iter()
            .zip(&self.predicted)
            .skip(1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_drift(&self) -> f64 {
        self.drifts.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }

    /// `‖F_{k+1}‖ / ‖F_k‖`.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// `k_max` iterations of `variant` on the midpoint system, recording the
/// entropy drift of the induced update `2Uᵏ − uⁿ` and the Newton
/// prediction `−2ΔxΔt ΔUᵀM̂ΔU` at each iterate.
pub fn midpoint_study(r: &Reference, variant: NewtonVariant, k_max: usize) -> NewtonStudy {
    let eta = entropy(r);
    let sys = midpoint_stage_system(&r.sd, &r.u0, r.dt).unwrap().with_monitor(&eta);
    let sol = nonlinear::solve(&sys, &fixed(variant, k_max), &sys.initial_guess()).unwrap();
    let tr = sol.trace;
    let e0 = eta.eval(&r.u0);
    let dx = r.sd.grid().dx();
    let d = r.sd.d1().matrix();
    let predicted = (0..tr.residual_norms.len())
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                -2.0 * dx * r.dt * split_form_oracle(d, &tr.iterates[k - 1], &tr.steps[k - 1])
            }
        })
        .collect();
    NewtonStudy {
        residuals: tr.residual_norms,
        drifts: tr.update_functional.iter().map(|e| e - e0).collect(),
        predicted,
        alphas: tr.alphas,
    }
}

/// Tight Lobatto IIIC solve: `η(u¹) − [η(u⁰) − η(y¹ − u⁰)]`, plus the
/// largest defect of the stage-block identity over `k = 1..=k_max` partial
/// Newton solves.
pub fn lobatto_identities(r: &Reference, k_max: usize) -> Result<(f64, f64), String> {
    let eta = entropy(r);
    let n = r.u0.len();
    let dx = r.sd.grid().dx();
    let sys = lobatto_iiic_stage_system(&r.sd, &r.u0, r.dt).unwrap().with_monitor(&eta);
    let b = sys.scheme().unwrap().b().to_vec();
    let e0 = eta.eval(&r.u0);

    let tight = SolverConfig::newton(1e-13, 0.0, 100);
    let sol = nonlinear::solve(&sys, &tight, &sys.initial_guess()).map_err(|e| e.to_string())?;
    let u1 = sys.update(&sol.x);
    let y1: Vec<f64> = sol.x[..n].iter().zip(&r.u0).map(|(a, b)| a - b).collect();
    let exact_defect = (eta.eval(&u1) - (e0 - half_sq(dx, &y1))).abs();

    let sol = nonlinear::solve(&sys, &fixed(NewtonVariant::Newton, k_max), &sys.initial_guess())
        .map_err(|e| e.to_string())?;
    let tr = sol.trace;
    let d = r.sd.d1().matrix();
    let mut partial_defect: f64 = 0.0;
    for k in 1..tr.residual_norms.len() {
        let (prev, step) = (&tr.iterates[k - 1], &tr.steps[k - 1]);
        let q: f64 = (0..b.len())
            .map(|i| b[i] * split_form_oracle(d, &prev[i * n..(i + 1) * n], &step[i * n..(i + 1) * n]))
            .sum();
        let y1: Vec<f64> = tr.iterates[k][..n].iter().zip(&r.u0).map(|(a, b)| a - b).collect();
        let lhs = tr.update_functional[k] - (e0 - half_sq(dx, &y1));
        partial_defect = partial_defect.max((lhs + 2.0 * r.dt * dx * q).abs());
    }
    Ok((exact_defect, partial_defect))
}

/// `u' = L u` for a fixed matrix.
pub struct LinearOde(pub Matrix);

impl OdeRhs for LinearOde {
    fn dim(&self) -> usize {
        self.0.rows()
    }
    fn rhs_into(&self, u: &[f64], out: &mut [f64]) {
        self.0.matvec_into(u, out);
    }
    fn jacobian_apply_into(&self, _u: &[f64], v: &[f64], out: &mut [f64]) {
        self.0.matvec_into(v, out);
    }
}

/// Canonical Hamiltonian system `u' = J∇H` with `H = ½uᵀSu`, `S` symmetric
/// positive definite: `L = JS`.
pub fn linear_hamiltonian(rng: &mut impl Rng, half: usize) -> LinearOde {
    let n = 2 * half;
    let b = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut s = b.transpose().matmul(&b);
    s.scale(1.0 / n as f64);
    s.add_scaled(1.0, &Matrix::identity(n));
    let j = Matrix::from_fn(n, n, |i, k| {
        if k == i + half {
            1.0
        } else if i == k + half {
            -1.0
        } else {
            0.0
        }
    });
    LinearOde(j.matmul(&s))
}

/// Largest per-step difference between AVF and midpoint over `steps` steps.
pub fn avf_vs_midpoint(ode: &LinearOde, u0: &[f64], dt: f64, steps: usize) -> f64 {
    let cfg = SolverConfig::newton(1e-15, 0.0, 5);
    let (mut a, mut m) = (u0.to_vec(), u0.to_vec());
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let sa = avf_stage_system(ode, &a, dt).unwrap();
        let xa = nonlinear::solve(&sa, &cfg, &sa.initial_guess()).unwrap().x;
        a = sa.update(&xa);
        let sm = midpoint_stage_system(ode, &m, dt).unwrap();
        let xm = nonlinear::solve(&sm, &cfg, &sm.initial_guess()).unwrap().x;
        m = sm.update(&xm);
        let diff = a.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    worst
}

/// GMRES against LU on a random well-conditioned system: (solution
/// difference, history monotone, iterations).
pub fn gmres_vs_lu(rng: &mut impl Rng, n: usize) -> (f64, bool, usize) {
    let mut a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) / (n as f64).sqrt());
    a.add_scaled(3.0, &Matrix::identity(n));
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x_lu = lu_solve(&a, &b).unwrap();
    let (x, rep) = gmres(|v, out| a.matvec_into(v, out), &b, &vec![0.0; n], 1e-10, n);
    let diff = x.iter().zip(&x_lu).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let monotone = rep.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    (diff, monotone, rep.iterations)
}

/// Outer residual history of Newton-GMRES on the reference problem.
pub fn newton_gmres_history(r: &Reference, forcing: Forcing, rel_tol: f64) -> Vec<f64> {
    let sys = midpoint_stage_system(&r.sd, &r.u0, r.dt).unwrap();
    let mut cfg = SolverConfig::newton_gmres(0.0, rel_tol, 30);
    cfg.forcing = forcing;
    nonlinear::solve(&sys, &cfg, &sys.initial_guess()).unwrap().trace.residual_norms
}

pub fn newton_direct_history(r: &Reference, rel_tol: f64) -> Vec<f64> {
    let sys = midpoint_stage_system(&r.sd, &r.u0, r.dt).unwrap();
    let cfg = SolverConfig {
        linear_solver: LinearSolver::Direct,
        ..SolverConfig::newton(0.0, rel_tol, 30)
    };
    nonlinear::solve(&sys, &cfg, &sys.initial_guess()).unwrap().trace.residual_norms
}

pub fn norm(v: &[f64]) -> f64 {
    norm2(v)
}
