//! Experiment drivers: the single-step Newton study on Burgers and long-time
//! integration of KdV/BBM solitary waves with CSV output.

use super::config::{ConfigError, ExperimentConfig};
use super::exact::{exact_bbm_wave, exact_kdv_soliton, l2_error};
use crate::integrators::{self, stage_system, IntegratorError, Relaxation, SchemeKind, StageSystem, StepError};
use crate::nonlinear::{self, NewtonVariant, SolveError, SolverConfig};
use crate::relaxation::RelaxationMode;
use crate::semidisc::{Equation, Functional, FunctionalKind, Grid, SemiDiscretization, SemidiscError};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("solver failure in step {step} at t = {t}: {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: StepError,
    },
    #[error("solver failure: {0}")]
    Solve(#[from] SolveError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Process exit code: 1 for solver failures, 2 for configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Setup(_) => 2,
            _ => 1,
        }
    }
}

impl From<SemidiscError> for RunError {
    fn from(e: SemidiscError) -> Self {
        RunError::Setup(e.to_string())
    }
}

impl From<IntegratorError> for RunError {
    fn from(e: IntegratorError) -> Self {
        RunError::Setup(e.to_string())
    }
}

/// Semidiscretization plus initial data for a configuration.
pub struct Problem {
    pub config: ExperimentConfig,
    pub sd: SemiDiscretization,
    pub nodes: Vec<f64>,
    pub u0: Vec<f64>,
}

impl Problem {
    pub fn new(config: &ExperimentConfig) -> Result<Self, RunError> {
        config.validate()?;
        let grid = Grid::new(config.x_min, config.x_max, config.n);
        let sd = SemiDiscretization::new(config.equation, grid, config.operator_family, config.accuracy_order)?;
        let nodes = grid.nodes();
        let mut p = Self {
            config: config.clone(),
            sd,
            nodes,
            u0: Vec::new(),
        };
        p.u0 = p.exact(0.0).ok_or_else(|| RunError::Setup("no initial data".into()))?;
        Ok(p)
    }

    /// Traveling-wave solution at time `t` (the `t = 0` profile doubles as
    /// initial data for Burgers, which has no smooth exact solution here).
    pub fn exact(&self, t: f64) -> Option<Vec<f64>> {
        let c = self.config.wave_speed;
        let dom = self.config.domain();
        match self.config.equation {
            Equation::Burgers if t != 0.0 => None,
            Equation::Burgers | Equation::Kdv => {
                Some(self.nodes.iter().map(|&x| exact_kdv_soliton(x, t, c, dom)).collect())
            }
            Equation::BbmSplit | Equation::BbmCentral => self
                .nodes
                .iter()
                .map(|&x| exact_bbm_wave(x, t, c, dom).ok())
                .collect(),
        }
    }

    pub fn relaxed_functional(&self) -> FunctionalKind {
        self.config.relaxation.functional.unwrap_or_else(|| self.sd.entropy_kind())
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of the single-step Newton study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub k: usize,
    pub residual: f64,
    pub entropy: f64,
    pub drift: f64,
    /// Drift predicted by the Newton entropy-error identity (Newton variant).
    pub predicted_drift: Option<f64>,
}

/// Performs `k = 0..=k_max` iterations of the configured solver variant on
/// one step from the initial data (`U⁰ = uⁿ`) and records the entropy of the
/// induced update and the residual after each iteration.
pub fn run_burgers_newton_study(cfg: &ExperimentConfig, k_max: usize) -> Result<Vec<StudyRow>, RunError> {
    if cfg.equation != Equation::Burgers {
        return Err(ConfigError::Invalid("the Newton study needs equation = burgers".into()).into());
    }
    if cfg.scheme == SchemeKind::Avf {
        return Err(ConfigError::Invalid("the Newton study supports midpoint and lobatto_iiic".into()).into());
    }
    let p = Problem::new(cfg)?;
    let eta = p.sd.functional(FunctionalKind::QuadraticEntropy);
    let sys = stage_system(cfg.scheme, &p.sd, &p.u0, cfg.dt, Some(&eta))?;
    let mut solver = SolverConfig::fixed_iterations(cfg.solver.variant, k_max);
    solver.linear_solver = cfg.solver.to_solver_config().linear_solver;
    solver.forcing = cfg.solver.to_solver_config().forcing;
    let sol = nonlinear::solve(sys.as_ref(), &solver, &sys.initial_guess())?;
    let tr = &sol.trace;
    let e0 = eta.eval(&p.u0);
    let n = p.u0.len();
    let rows = (0..tr.residual_norms.len())
        .map(|k| {
            let predicted = (cfg.solver.variant == NewtonVariant::Newton).then(|| {
                if k == 0 {
                    return 0.0;
                }
                let (prev, step) = (&tr.iterates[k - 1], &tr.steps[k - 1]);
                match cfg.scheme {
                    SchemeKind::Midpoint => nonlinear::midpoint_newton_entropy_error(&p.sd, cfg.dt, prev, step),
                    _ => {
                        let b = sys.scheme().expect("Runge-Kutta system").b();
                        let y1: Vec<f64> = tr.iterates[k][..n].iter().zip(&p.u0).map(|(a, b)| a - b).collect();
                        -eta.eval(&y1) + nonlinear::stacked_newton_entropy_error(&p.sd, b, cfg.dt, prev, step)
                    }
                }
            });
            StudyRow {
                k,
                residual: tr.residual_norms[k],
                entropy: tr.update_functional[k],
                drift: tr.update_functional[k] - e0,
                predicted_drift: predicted,
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_study_csv<W: Write>(cfg: &ExperimentConfig, rows: &[StudyRow], out: &mut W) -> io::Result<()> {
    for line in cfg.to_text().lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "k,residual,entropy,drift,predicted_drift")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.k,
            fmt_f(r.residual),
            fmt_f(r.entropy),
            fmt_f(r.drift),
            r.predicted_drift.map(fmt_f).unwrap_or_default()
        )?;
    }
    out.flush()
}

/// One recorded time of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRow {
    pub step: usize,
    pub t: f64,
    pub l2_error: f64,
    pub invariants: Vec<f64>,
    pub drifts: Vec<f64>,
    pub gamma: Option<f64>,
    pub newton_iters: usize,
    pub gmres_iters: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub invariant_names: Vec<&'static str>,
    pub rows: Vec<TimeSeriesRow>,
    pub steps: usize,
    pub final_t: f64,
    pub final_u: Vec<f64>,
}

impl RunOutput {
    /// Column of the named invariant's drift.
    pub fn drift_series(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.invariant_names.iter().position(|n| *n == name)?;
        Some(self.rows.iter().map(|r| r.drifts[i]).collect())
    }
}

pub fn csv_header(names: &[&str]) -> String {
    let mut h = String::from("step,t,l2_error");
    for n in names {
        h.push_str(&format!(",inv_{n}"));
    }
    for n in names {
        h.push_str(&format!(",drift_{n}"));
    }
    h.push_str(",gamma,newton_iters,gmres_iters,residual");
    h
}

fn csv_row(r: &TimeSeriesRow) -> String {
    let mut s = format!("{},{},{}", r.step, fmt_f(r.t), fmt_f(r.l2_error));
    for v in r.invariants.iter().chain(&r.drifts) {
        s.push(',');
        s.push_str(&fmt_f(*v));
    }
    s.push(',');
    if let Some(g) = r.gamma {
        s.push_str(&fmt_f(g));
    }
    s.push_str(&format!(",{},{},{}", r.newton_iters, r.gmres_iters, fmt_f(r.residual)));
    s
}

/// Integrates from `t = 0` to the configured final time, streaming CSV rows
/// every `record_every` steps (and at the final step) to `out`. On a solver
/// failure the rows written so far are flushed before the error returns.
pub fn run_time_integration<W: Write>(
    cfg: &ExperimentConfig,
    full_scale: bool,
    out: &mut W,
) -> Result<RunOutput, RunError> {
    let p = Problem::new(cfg)?;
    let kinds = p.sd.invariants();
    let funcs: Vec<_> = kinds.iter().map(|&k| p.sd.functional(k)).collect();
    let names: Vec<&'static str> = kinds.iter().map(|k| k.name()).collect();
    let initial: Vec<f64> = funcs.iter().map(|f| f.eval(&p.u0)).collect();

    let relaxed = p.sd.functional(p.relaxed_functional());
    let policy = cfg.relaxation.to_policy();
    let relax = if policy.mode == RelaxationMode::Off {
        Relaxation::off()
    } else {
        Relaxation::new(policy, &relaxed)
    };
    let solver = cfg.solver.to_solver_config();
    let t_final = if full_scale { cfg.full_scale_t_end } else { cfg.t_end };

    for line in cfg.to_text().lines() {
        writeln!(out, "# {line}")?;
    }
    if full_scale {
        writeln!(out, "# full_scale = true")?;
    }
    writeln!(out, "{}", csv_header(&names))?;

    let mass = p.sd.mass().clone();
    let make_row = |step: usize, t: f64, u: &[f64], rep: Option<&integrators::SolveReport>| {
        let invariants: Vec<f64> = funcs.iter().map(|f| f.eval(u)).collect();
        let drifts = invariants.iter().zip(&initial).map(|(a, b)| a - b).collect();
        let l2 = p
            .exact(t)
            .and_then(|ex| l2_error(u, &ex, &mass).ok())
            .unwrap_or(f64::NAN);
        TimeSeriesRow {
            step,
            t,
            l2_error: l2,
            invariants,
            drifts,
            gamma: rep.and_then(|r| r.gamma),
            newton_iters: rep.map_or(0, |r| r.newton_iterations),
            gmres_iters: rep.map_or(0, |r| r.linear_iterations),
            residual: rep.map_or(0.0, |r| r.final_residual()),
        }
    };

    let mut rows = Vec::new();
    let first = make_row(0, 0.0, &p.u0, None);
    writeln!(out, "{}", csv_row(&first))?;
    rows.push(first);

    let mut u = p.u0.clone();
    let mut t = 0.0;
    let mut step = 0;
    while t < t_final - 1e-9 * cfg.dt {
        let sys = stage_system(cfg.scheme, &p.sd, &u, cfg.dt, None)?;
        let res = match integrators::step(sys.as_ref(), t, &solver, &relax) {
            Ok(r) => r,
            Err(source) => {
                out.flush()?;
                return Err(RunError::Step { step: step + 1, t, source });
            }
        };
        drop(sys);
        step += 1;
        u = res.u;
        t = res.t;
        let last = t >= t_final - 1e-9 * cfg.dt;
        if step % cfg.record_every == 0 || last {
            let row = make_row(step, t, &u, Some(&res.report));
            writeln!(out, "{}", csv_row(&row))?;
            rows.push(row);
        }
    }
    out.flush()?;
    Ok(RunOutput {
        invariant_names: names,
        rows,
        steps: step,
        final_t: t,
        final_u: u,
    })
}

/// Companion metadata path: `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Runs [`run_time_integration`] into `path` and writes the resolved
/// configuration plus the run status to `<path>.meta`.
pub fn run_to_file(cfg: &ExperimentConfig, full_scale: bool, path: &Path) -> Result<RunOutput, RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    let result = run_time_integration(cfg, full_scale, &mut w);
    w.flush()?;
    let mut meta = cfg.to_text();
    meta.push_str(&format!("full_scale = {full_scale}\n"));
    match &result {
        Ok(o) => meta.push_str(&format!("status = ok\nsteps = {}\nfinal_t = {:.16e}\n", o.steps, o.final_t)),
        Err(e) => meta.push_str(&format!("status = failed\nerror = {e}\n")),
    }
    std::fs::write(meta_path(path), meta)?;
    result
}

/// Runs every configuration of a sweep concurrently, writing
/// `<out_dir>/<label>.csv` for each.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    full_scale: bool,
    out_dir: &Path,
) -> Result<Vec<(String, Result<RunOutput, RunError>)>, RunError> {
    let runs = cfg.expand_sweep()?;
    std::fs::create_dir_all(out_dir)?;
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(label, c)| {
                let label = if label.is_empty() { "run".to_string() } else { label.clone() };
                let path = out_dir.join(format!("{label}.csv"));
                s.spawn(move || (label, run_to_file(c, full_scale, &path)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    Ok(results)
}

/// Convenience for tests and the acceptance suite: integrate without
/// keeping the CSV text.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    run_time_integration(cfg, false, &mut io::sink())
}

/// Single relaxed or unrelaxed step from `u` (used by convergence studies).
pub fn single_step(
    sd: &SemiDiscretization,
    scheme: SchemeKind,
    u: &[f64],
    t: f64,
    dt: f64,
    solver: &SolverConfig,
    relax: &Relaxation<'_>,
) -> Result<integrators::StepResult, RunError> {
    let sys: Box<dyn StageSystem + '_> = stage_system(scheme, sd, u, dt, None)?;
    integrators::step(sys.as_ref(), t, solver, relax).map_err(|source| RunError::Step { step: 0, t, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_kdv() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.t_end = 0.5;
        c.dt = 0.1;
        c.n = 100;
        c
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(&["mass", "entropy"]),
            "step,t,l2_error,inv_mass,inv_entropy,drift_mass,drift_entropy,gamma,newton_iters,gmres_iters,residual"
        );
    }

    #[test]
    fn short_run_rows() {
        let mut buf = Vec::new();
        let out = run_time_integration(&small_kdv(), false, &mut buf).unwrap();
        assert_eq!(out.steps, 5);
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows[0].drifts.iter().all(|&d| d == 0.0));
        assert!(out.rows.windows(2).all(|w| w[1].t > w[0].t));
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.starts_with("step,t,l2_error")));
        assert!(text.lines().next().unwrap().starts_with("# equation = kdv"));
    }

    #[test]
    fn study_needs_burgers() {
        assert!(matches!(
            run_burgers_newton_study(&small_kdv(), 3),
            Err(RunError::Config(_))
        ));
    }

    #[test]
    fn solver_failure_flushes_partial_output() {
        let mut cfg = small_kdv();
        cfg.solver.max_iters = 0;
        cfg.solver.abs_tol = 1e-30;
        cfg.solver.rel_tol = 1e-30;
        let mut buf = Vec::new();
        let err = run_time_integration(&cfg, false, &mut buf).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().last().unwrap().starts_with("0,"));
    }
}
