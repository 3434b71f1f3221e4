//! Experiment configuration in a flat `key = value` text format.
//!
//! Keys carry dotted section prefixes (`solver.rel_tol = 1e-3`); a
//! `[section]` header line prefixes the keys that follow it. `#` starts a
//! comment. Every key has a default, so an empty file is a valid KdV run.

use crate::integrators::SchemeKind;
use crate::nonlinear::{Forcing, LinearSolver, NewtonVariant, SolverConfig};
use crate::operators::OperatorFamily;
use crate::relaxation::{EntropyTarget, RelaxationMode, RelaxationPolicy};
use crate::semidisc::{Equation, FunctionalKind};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read `{path}`: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingKind {
    Fixed,
    EisenstatWalker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub variant: NewtonVariant,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub gmres: bool,
    pub gmres_max_dim: Option<usize>,
    pub forcing: ForcingKind,
    pub eta: f64,
    pub ew_gamma: f64,
    pub ew_eta_max: f64,
    pub accept_unconverged: bool,
}

impl SolverSettings {
    pub fn to_solver_config(&self) -> SolverConfig {
        SolverConfig {
            variant: self.variant,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iters: self.max_iters,
            linear_solver: if self.gmres {
                LinearSolver::Gmres {
                    max_dim: self.gmres_max_dim,
                }
            } else {
                LinearSolver::Direct
            },
            forcing: match self.forcing {
                ForcingKind::Fixed => Forcing::Fixed(self.eta),
                ForcingKind::EisenstatWalker => Forcing::EisenstatWalker {
                    gamma: self.ew_gamma,
                    eta_max: self.ew_eta_max,
                },
            },
            accept_unconverged: self.accept_unconverged,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSettings {
    pub mode: RelaxationMode,
    /// Root tolerance used when `mode` is general.
    pub tol: f64,
    pub target: EntropyTarget,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Relaxed functional; defaults to the equation's entropy.
    pub functional: Option<FunctionalKind>,
}

impl RelaxationSettings {
    pub fn to_policy(&self) -> RelaxationPolicy {
        RelaxationPolicy {
            mode: self.mode,
            target: self.target,
            gamma_bounds: (self.gamma_min, self.gamma_max),
            ..RelaxationPolicy::new(self.mode)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub equation: Equation,
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub operator_family: OperatorFamily,
    pub accuracy_order: usize,
    pub scheme: SchemeKind,
    pub dt: f64,
    pub t_end: f64,
    /// Final time used instead of `t_end` by full-scale runs.
    pub full_scale_t_end: f64,
    pub wave_speed: f64,
    pub solver: SolverSettings,
    pub relaxation: RelaxationSettings,
    pub output: Option<PathBuf>,
    pub record_every: usize,
    /// Largest iteration count of the single-step Newton study.
    pub study_k_max: usize,
    /// `sweep.<key> = v1, v2, ...` entries, expanded by the sweep driver.
    pub sweep: Vec<(String, Vec<String>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            equation: Equation::Kdv,
            x_min: -10.0,
            x_max: 10.0,
            n: 200,
            operator_family: OperatorFamily::CentralFd,
            accuracy_order: 4,
            scheme: SchemeKind::Midpoint,
            dt: 0.05,
            t_end: 100.0,
            full_scale_t_end: 1000.0,
            wave_speed: 2.0,
            solver: SolverSettings {
                variant: NewtonVariant::Newton,
                abs_tol: 0.0,
                rel_tol: 1e-3,
                max_iters: 50,
                gmres: true,
                gmres_max_dim: None,
                forcing: ForcingKind::EisenstatWalker,
                eta: 1e-12,
                ew_gamma: 0.9,
                ew_eta_max: 0.9,
                accept_unconverged: false,
            },
            relaxation: RelaxationSettings {
                mode: RelaxationMode::Off,
                tol: 1e-14,
                target: EntropyTarget::Conserve,
                gamma_min: 0.5,
                gamma_max: 1.5,
                functional: None,
            },
            output: None,
            record_every: 1,
            study_k_max: 8,
            sweep: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

pub fn functional_kind_from_name(name: &str) -> Option<FunctionalKind> {
    [
        FunctionalKind::QuadraticEntropy,
        FunctionalKind::BbmJ1,
        FunctionalKind::BbmJ2,
        FunctionalKind::BbmJ3,
        FunctionalKind::BbmHamiltonian,
        FunctionalKind::Mass,
    ]
    .into_iter()
    .find(|k| k.name() == name)
}

/// Shortest round-trip text for a number, in exponent form when tiny or huge.
fn num(x: f64) -> String {
    if x != 0.0 && !(1e-4..1e6).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn mode_tag(mode: RelaxationMode) -> &'static str {
    match mode {
        RelaxationMode::Off => "off",
        RelaxationMode::Quadratic => "quadratic",
        RelaxationMode::Cubic => "cubic",
        RelaxationMode::General { .. } => "general",
    }
}

impl ExperimentConfig {
    /// Parses `text` on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override; on error `self` is left unchanged.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        let mut next = self.clone();
        next.set(key.trim(), value.trim())?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Sets one key without validating cross-field constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = &mut self.solver;
        let r = &mut self.relaxation;
        match key {
            "equation" => self.equation = parse(key, value)?,
            "domain.x_min" => self.x_min = parse(key, value)?,
            "domain.x_max" => self.x_max = parse(key, value)?,
            "grid.n" => self.n = parse(key, value)?,
            "operator.family" => self.operator_family = parse(key, value)?,
            "operator.accuracy" => self.accuracy_order = parse(key, value)?,
            "scheme" => self.scheme = parse(key, value)?,
            "time.dt" => self.dt = parse(key, value)?,
            "time.t_end" => self.t_end = parse(key, value)?,
            "time.full_scale_t_end" => self.full_scale_t_end = parse(key, value)?,
            "wave.c" => self.wave_speed = parse(key, value)?,
            "output.path" => self.output = Some(PathBuf::from(value)),
            "output.record_every" => self.record_every = parse(key, value)?,
            "study.k_max" => self.study_k_max = parse(key, value)?,
            "solver.variant" => s.variant = parse(key, value)?,
            "solver.abs_tol" => s.abs_tol = parse(key, value)?,
            "solver.rel_tol" => s.rel_tol = parse(key, value)?,
            "solver.max_iters" => s.max_iters = parse(key, value)?,
            "solver.linear" => {
                s.gmres = match value {
                    "gmres" => true,
                    "direct" => false,
                    _ => return Err(invalid(key, value, "expected `direct` or `gmres`")),
                }
            }
            "solver.gmres_max_dim" => s.gmres_max_dim = Some(parse(key, value)?),
            "solver.forcing" => {
                s.forcing = match value {
                    "fixed" => ForcingKind::Fixed,
                    "eisenstat-walker" | "eisenstat_walker" => ForcingKind::EisenstatWalker,
                    _ => return Err(invalid(key, value, "expected `fixed` or `eisenstat-walker`")),
                }
            }
            "solver.eta" => s.eta = parse(key, value)?,
            "solver.ew_gamma" => s.ew_gamma = parse(key, value)?,
            "solver.ew_eta_max" => s.ew_eta_max = parse(key, value)?,
            "solver.accept_unconverged" => s.accept_unconverged = parse(key, value)?,
            "relaxation.mode" => {
                r.mode = match value {
                    "off" => RelaxationMode::Off,
                    "quadratic" => RelaxationMode::Quadratic,
                    "cubic" => RelaxationMode::Cubic,
                    "general" => RelaxationMode::General { tol: r.tol },
                    _ => return Err(invalid(key, value, "expected off|quadratic|cubic|general")),
                }
            }
            "relaxation.tol" => {
                r.tol = parse(key, value)?;
                if let RelaxationMode::General { tol } = &mut r.mode {
                    *tol = r.tol;
                }
            }
            "relaxation.target" => {
                r.target = match value {
                    "conserve" => EntropyTarget::Conserve,
                    "rk_estimate" | "rk-estimate" => EntropyTarget::RkEstimate,
                    _ => return Err(invalid(key, value, "expected `conserve` or `rk_estimate`")),
                }
            }
            "relaxation.gamma_min" => r.gamma_min = parse(key, value)?,
            "relaxation.gamma_max" => r.gamma_max = parse(key, value)?,
            "relaxation.functional" => {
                r.functional = Some(
                    functional_kind_from_name(value).ok_or_else(|| invalid(key, value, "unknown functional"))?,
                )
            }
            _ => {
                if let Some(swept) = key.strip_prefix("sweep.") {
                    // check the swept key and values up front
                    let values: Vec<String> = value
                        .split(',')
                        .map(|v| v.trim().to_string())
                        .filter(|v| !v.is_empty())
                        .collect();
                    if values.is_empty() {
                        return Err(invalid(key, value, "empty sweep list"));
                    }
                    let mut probe = self.clone();
                    for v in &values {
                        probe.set(swept, v)?;
                    }
                    self.sweep.retain(|(k, _)| k != swept);
                    self.sweep.push((swept.to_string(), values));
                } else {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.x_max > self.x_min) {
            return bad(format!("x_max = {} must exceed x_min = {}", self.x_max, self.x_min));
        }
        if self.n == 0 {
            return bad("grid.n must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("time.dt = {} must be positive", self.dt));
        }
        if !(self.t_end > 0.0 && self.full_scale_t_end > 0.0) {
            return bad("final times must be positive".into());
        }
        if self.equation.is_bbm() && !(self.wave_speed > 1.0) {
            return bad(format!("BBM waves need c > 1, got {}", self.wave_speed));
        }
        if !self.equation.is_bbm() && !(self.wave_speed > 0.0) {
            return bad(format!("soliton speed must be positive, got {}", self.wave_speed));
        }
        if self.record_every == 0 {
            return bad("output.record_every must be at least 1".into());
        }
        self.solver.to_solver_config().validate().map_err(ConfigError::Invalid)?;
        self.relaxation
            .to_policy()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let s = &self.solver;
        let r = &self.relaxation;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("equation", self.equation.tag().into());
        kv("domain.x_min", num(self.x_min));
        kv("domain.x_max", num(self.x_max));
        kv("grid.n", self.n.to_string());
        kv("operator.family", self.operator_family.tag().into());
        kv("operator.accuracy", self.accuracy_order.to_string());
        kv("scheme", self.scheme.tag().into());
        kv("time.dt", num(self.dt));
        kv("time.t_end", num(self.t_end));
        kv("time.full_scale_t_end", num(self.full_scale_t_end));
        kv("wave.c", num(self.wave_speed));
        kv("solver.variant", s.variant.tag().into());
        kv("solver.abs_tol", num(s.abs_tol));
        kv("solver.rel_tol", num(s.rel_tol));
        kv("solver.max_iters", s.max_iters.to_string());
        kv("solver.linear", if s.gmres { "gmres" } else { "direct" }.into());
        if let Some(m) = s.gmres_max_dim {
            kv("solver.gmres_max_dim", m.to_string());
        }
        kv(
            "solver.forcing",
            match s.forcing {
                ForcingKind::Fixed => "fixed",
                ForcingKind::EisenstatWalker => "eisenstat-walker",
            }
            .into(),
        );
        kv("solver.eta", num(s.eta));
        kv("solver.ew_gamma", num(s.ew_gamma));
        kv("solver.ew_eta_max", num(s.ew_eta_max));
        kv("solver.accept_unconverged", s.accept_unconverged.to_string());
        kv("relaxation.mode", mode_tag(r.mode).into());
        kv("relaxation.tol", num(r.tol));
        kv(
            "relaxation.target",
            match r.target {
                EntropyTarget::Conserve => "conserve",
                EntropyTarget::RkEstimate => "rk_estimate",
            }
            .into(),
        );
        kv("relaxation.gamma_min", num(r.gamma_min));
        kv("relaxation.gamma_max", num(r.gamma_max));
        if let Some(f) = r.functional {
            kv("relaxation.functional", f.name().into());
        }
        if let Some(p) = &self.output {
            kv("output.path", p.display().to_string());
        }
        kv("output.record_every", self.record_every.to_string());
        kv("study.k_max", self.study_k_max.to_string());
        for (k, vals) in &self.sweep {
            kv(&format!("sweep.{k}"), vals.join(", "));
        }
        out
    }

    /// All configurations of the sweep (the cartesian product of the
    /// `sweep.*` lists), each with a short label.
    pub fn expand_sweep(&self) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
        let mut runs = vec![(String::new(), ExperimentConfig { sweep: Vec::new(), ..self.clone() })];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(runs.len() * values.len());
            for (label, cfg) in &runs {
                for v in values {
                    let mut c = cfg.clone();
                    c.set(key, v)?;
                    let tag = format!("{}={}", key.rsplit('.').next().unwrap_or(key), v);
                    let l = if label.is_empty() { tag } else { format!("{label}_{tag}") };
                    next.push((l, c));
                }
            }
            runs = next;
        }
        for (_, c) in &runs {
            c.validate()?;
        }
        Ok(runs)
    }
}
