//! Semidiscretizations of Burgers, KdV and BBM on periodic grids.
//!
//! Every right-hand side here is written in a split or central form whose
//! entropy (or Hamiltonian) production cancels exactly through the skew
//! symmetry of the first-derivative operator. The [`Functional`] handles
//! expose the conserved quantities together with their gradients.

use crate::linalg::{LinalgError, LuFactorization, Matrix};
use crate::operators::{make_central_fd, make_fourier, GridOperator, MassMatrix, OperatorError, OperatorFamily};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemidiscError {
    #[error("state has {got} entries, grid has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("internal error: elliptic operator I - D2 could not be factorized: {0}")]
    Elliptic(LinalgError),
    #[error("{0}")]
    Unsupported(String),
}

/// Periodic domain `(x_min, x_max]` with `n` equispaced nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Self {
        assert!(x_max > x_min, "empty domain");
        assert!(n > 0, "grid needs nodes");
        Self { x_min, x_max, n }
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    /// Node coordinates `x_min + j·dx`, `j = 1..=n`.
    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.n).map(|j| self.x_min + j as f64 * dx).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    Burgers,
    Kdv,
    BbmSplit,
    BbmCentral,
}

impl Equation {
    pub fn tag(&self) -> &'static str {
        match self {
            Equation::Burgers => "burgers",
            Equation::Kdv => "kdv",
            Equation::BbmSplit => "bbm-split",
            Equation::BbmCentral => "bbm-central",
        }
    }

    pub fn is_bbm(&self) -> bool {
        matches!(self, Equation::BbmSplit | Equation::BbmCentral)
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Equation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "burgers" => Ok(Equation::Burgers),
            "kdv" => Ok(Equation::Kdv),
            "bbm-split" => Ok(Equation::BbmSplit),
            "bbm-central" => Ok(Equation::BbmCentral),
            other => Err(format!("unknown equation `{other}`")),
        }
    }
}

/// An autonomous ODE `u' = f(u)` with an analytic Jacobian.
pub trait OdeRhs {
    fn dim(&self) -> usize;

    fn rhs_into(&self, u: &[f64], out: &mut [f64]);

    /// `out = f'(u) v`
    fn jacobian_apply_into(&self, u: &[f64], v: &[f64], out: &mut [f64]);

    fn jacobian_matrix(&self, u: &[f64]) -> Matrix {
        let n = self.dim();
        let mut jac = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.jacobian_apply_into(u, &e, &mut col);
            jac.set_column(j, &col);
            e[j] = 0.0;
        }
        jac
    }

    /// Part of the Jacobian whose contribution to the quadratic entropy
    /// vanishes identically (a skew form in the current state). `None` when
    /// the equation has no such splitting.
    fn neutral_jacobian_matrix(&self, _u: &[f64]) -> Option<Matrix> {
        None
    }

    /// Quadrature weight used for residual norms.
    fn norm_weight(&self) -> f64 {
        1.0
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.rhs_into(u, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionalKind {
    QuadraticEntropy,
    BbmJ1,
    BbmJ2,
    BbmJ3,
    BbmHamiltonian,
    /// Linear invariant `1ᵀMu` of Burgers and KdV.
    Mass,
}

impl FunctionalKind {
    pub fn name(&self) -> &'static str {
        match self {
            FunctionalKind::QuadraticEntropy => "entropy",
            FunctionalKind::BbmJ1 => "j1",
            FunctionalKind::BbmJ2 => "j2",
            FunctionalKind::BbmJ3 => "j3",
            FunctionalKind::BbmHamiltonian => "hamiltonian",
            FunctionalKind::Mass => "mass",
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            FunctionalKind::BbmJ1 | FunctionalKind::Mass => 1,
            FunctionalKind::QuadraticEntropy | FunctionalKind::BbmJ2 => 2,
            FunctionalKind::BbmJ3 | FunctionalKind::BbmHamiltonian => 3,
        }
    }
}

/// A smooth scalar functional of the state.
pub trait Functional {
    fn name(&self) -> &str;

    fn eval(&self, u: &[f64]) -> f64;

    /// The derivative `F'(u)` as a vector (so that `F'(u)v = gradient·v`).
    fn gradient(&self, u: &[f64]) -> Vec<f64>;

    /// Polynomial degree of `F`, if it is a polynomial.
    fn degree(&self) -> Option<usize> {
        None
    }

    /// For homogeneous quadratics `F(u) = ½B(u, u)`: the symmetric form `B`.
    fn bilinear(&self, _a: &[f64], _b: &[f64]) -> Option<f64> {
        None
    }
}

/// `½ Δx uᵀu`, the quadratic entropy with an arbitrary diagonal mass.
#[derive(Debug, Clone)]
pub struct QuadraticEntropy {
    mass: MassMatrix,
}

impl QuadraticEntropy {
    pub fn new(mass: MassMatrix) -> Self {
        Self { mass }
    }
}

impl Functional for QuadraticEntropy {
    fn name(&self) -> &str {
        "entropy"
    }

    fn eval(&self, u: &[f64]) -> f64 {
        0.5 * self.mass.inner(u, u)
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.mass.weights()).map(|(x, w)| w * x).collect()
    }

    fn degree(&self) -> Option<usize> {
        Some(2)
    }

    fn bilinear(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        Some(self.mass.inner(a, b))
    }
}

/// One of the invariants attached to a [`SemiDiscretization`].
#[derive(Debug, Clone)]
pub struct Invariant {
    kind: FunctionalKind,
    mass: MassMatrix,
    /// `I − D2`, needed by J2.
    elliptic: Option<Matrix>,
}

impl Invariant {
    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }
}

impl Functional for Invariant {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn eval(&self, u: &[f64]) -> f64 {
        let m = &self.mass;
        match self.kind {
            FunctionalKind::QuadraticEntropy => 0.5 * m.inner(u, u),
            FunctionalKind::BbmJ1 | FunctionalKind::Mass => m.integrate(u),
            FunctionalKind::BbmJ2 => {
                let au = self.elliptic.as_ref().expect("J2 needs I - D2").matvec(u);
                0.5 * m.inner(u, &au)
            }
            FunctionalKind::BbmJ3 => {
                let cubes: Vec<f64> = u.iter().map(|x| (1.0 + x).powi(3)).collect();
                m.integrate(&cubes)
            }
            FunctionalKind::BbmHamiltonian => {
                let h: Vec<f64> = u.iter().map(|x| x * x * x / 6.0 + 0.5 * x * x).collect();
                m.integrate(&h)
            }
        }
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let w = self.mass.weights();
        match self.kind {
            FunctionalKind::QuadraticEntropy => u.iter().zip(w).map(|(x, w)| w * x).collect(),
            FunctionalKind::BbmJ1 | FunctionalKind::Mass => w.to_vec(),
            FunctionalKind::BbmJ2 => {
                // M(I − D2) is symmetric for uniform M
                let au = self.elliptic.as_ref().expect("J2 needs I - D2").matvec(u);
                au.iter().zip(w).map(|(x, w)| w * x).collect()
            }
            FunctionalKind::BbmJ3 => u
                .iter()
                .zip(w)
                .map(|(x, w)| 3.0 * w * (1.0 + x).powi(2))
                .collect(),
            FunctionalKind::BbmHamiltonian => u
                .iter()
                .zip(w)
                .map(|(x, w)| w * (0.5 * x * x + x))
                .collect(),
        }
    }

    fn degree(&self) -> Option<usize> {
        Some(self.kind.degree())
    }

    fn bilinear(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        match self.kind {
            FunctionalKind::QuadraticEntropy => Some(self.mass.inner(a, b)),
            FunctionalKind::BbmJ2 => {
                let ab = self.elliptic.as_ref()?.matvec(b);
                Some(self.mass.inner(a, &ab))
            }
            _ => None,
        }
    }
}

/// Right-hand side, Jacobian and invariants of one of the four model
/// semidiscretizations.
#[derive(Debug, Clone)]
pub struct SemiDiscretization {
    equation: Equation,
    grid: Grid,
    d1: GridOperator,
    /// D3 for KdV, D2 for BBM.
    aux: Option<GridOperator>,
    mass: MassMatrix,
    elliptic: Option<(Matrix, LuFactorization)>,
}

impl SemiDiscretization {
    /// Builds the operators for `equation` on `grid`. Burgers and KdV use
    /// central differences of the given accuracy; BBM uses `family`.
    pub fn new(
        equation: Equation,
        grid: Grid,
        family: OperatorFamily,
        accuracy_order: usize,
    ) -> Result<Self, SemidiscError> {
        let dx = grid.dx();
        let fd = |order| make_central_fd(order, accuracy_order, grid.n, dx);
        let four = |order| make_fourier(order, grid.n, grid.length());
        let make = |order: usize| -> Result<GridOperator, OperatorError> {
            match family {
                OperatorFamily::CentralFd => fd(order),
                OperatorFamily::Fourier => four(order),
            }
        };
        match equation {
            Equation::Burgers => Self::burgers(grid, make(1)?),
            Equation::Kdv => {
                if family == OperatorFamily::Fourier {
                    return Err(SemidiscError::Unsupported(
                        "KdV needs a third-derivative operator; use central-fd".into(),
                    ));
                }
                Self::kdv(grid, make(1)?, make(3)?)
            }
            Equation::BbmSplit | Equation::BbmCentral => Self::bbm(equation, grid, make(1)?, make(2)?),
        }
    }

    fn check_op(grid: &Grid, op: &GridOperator, order: usize) -> Result<(), SemidiscError> {
        if op.n() != grid.n || op.deriv_order() != order {
            return Err(SemidiscError::Unsupported(format!(
                "operator of order {} on {} nodes does not fit grid with {} nodes (expected order {order})",
                op.deriv_order(),
                op.n(),
                grid.n
            )));
        }
        Ok(())
    }

    pub fn burgers(grid: Grid, d1: GridOperator) -> Result<Self, SemidiscError> {
        Self::check_op(&grid, &d1, 1)?;
        Ok(Self {
            equation: Equation::Burgers,
            grid,
            mass: MassMatrix::uniform(grid.n, grid.dx()),
            d1,
            aux: None,
            elliptic: None,
        })
    }

    pub fn kdv(grid: Grid, d1: GridOperator, d3: GridOperator) -> Result<Self, SemidiscError> {
        Self::check_op(&grid, &d1, 1)?;
        Self::check_op(&grid, &d3, 3)?;
        Ok(Self {
            equation: Equation::Kdv,
            grid,
            mass: MassMatrix::uniform(grid.n, grid.dx()),
            d1,
            aux: Some(d3),
            elliptic: None,
        })
    }

    pub fn bbm(
        equation: Equation,
        grid: Grid,
        d1: GridOperator,
        d2: GridOperator,
    ) -> Result<Self, SemidiscError> {
        if !equation.is_bbm() {
            return Err(SemidiscError::Unsupported(format!("{equation} is not a BBM form")));
        }
        Self::check_op(&grid, &d1, 1)?;
        Self::check_op(&grid, &d2, 2)?;
        let mut a = Matrix::identity(grid.n);
        a.add_scaled(-1.0, d2.matrix());
        let lu = LuFactorization::new(&a).map_err(SemidiscError::Elliptic)?;
        Ok(Self {
            equation,
            grid,
            mass: MassMatrix::uniform(grid.n, grid.dx()),
            d1,
            aux: Some(d2),
            elliptic: Some((a, lu)),
        })
    }

    pub fn equation(&self) -> Equation {
        self.equation
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mass(&self) -> &MassMatrix {
        &self.mass
    }

    pub fn d1(&self) -> &GridOperator {
        &self.d1
    }

    /// D3 (KdV) or D2 (BBM).
    pub fn aux_operator(&self) -> Option<&GridOperator> {
        self.aux.as_ref()
    }

    fn check_len(&self, u: &[f64]) -> Result<(), SemidiscError> {
        if u.len() != self.grid.n {
            return Err(SemidiscError::DimensionMismatch {
                expected: self.grid.n,
                got: u.len(),
            });
        }
        Ok(())
    }

    fn elliptic_solve_in_place(&self, v: &mut [f64]) {
        let (_, lu) = self.elliptic.as_ref().expect("BBM forms carry I - D2");
        let x = lu.solve(v).expect("dimension checked");
        v.copy_from_slice(&x);
    }

    pub fn rhs_checked(&self, u: &[f64]) -> Result<Vec<f64>, SemidiscError> {
        self.check_len(u)?;
        Ok(self.rhs(u))
    }

    pub fn jacobian_checked(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, SemidiscError> {
        self.check_len(u)?;
        self.check_len(v)?;
        let mut out = vec![0.0; u.len()];
        self.jacobian_apply_into(u, v, &mut out);
        Ok(out)
    }

    /// Invariants the semidiscretization conserves, in CSV column order.
    pub fn invariants(&self) -> Vec<FunctionalKind> {
        match self.equation {
            Equation::Burgers | Equation::Kdv => {
                vec![FunctionalKind::Mass, FunctionalKind::QuadraticEntropy]
            }
            Equation::BbmSplit | Equation::BbmCentral => vec![
                FunctionalKind::BbmJ1,
                FunctionalKind::BbmJ2,
                FunctionalKind::BbmJ3,
                FunctionalKind::BbmHamiltonian,
            ],
        }
    }

    /// The nonlinear functional that relaxation targets for this equation.
    pub fn entropy_kind(&self) -> FunctionalKind {
        match self.equation {
            Equation::Burgers | Equation::Kdv => FunctionalKind::QuadraticEntropy,
            Equation::BbmSplit => FunctionalKind::BbmJ2,
            Equation::BbmCentral => FunctionalKind::BbmJ3,
        }
    }

    pub fn functional(&self, kind: FunctionalKind) -> Invariant {
        let elliptic = match kind {
            FunctionalKind::BbmJ2 => {
                let (a, _) = self
                    .elliptic
                    .as_ref()
                    .expect("J2 is only defined for BBM semidiscretizations");
                Some(a.clone())
            }
            _ => None,
        };
        Invariant {
            kind,
            mass: self.mass.clone(),
            elliptic,
        }
    }

    pub fn eval_functional(&self, kind: FunctionalKind, u: &[f64]) -> Result<f64, SemidiscError> {
        self.check_len(u)?;
        Ok(self.functional(kind).eval(u))
    }

    pub fn functional_gradient(&self, kind: FunctionalKind, u: &[f64]) -> Result<Vec<f64>, SemidiscError> {
        self.check_len(u)?;
        Ok(self.functional(kind).gradient(u))
    }

    /// `M̂ = diag(D u) + D diag(u)`, the part of the Burgers Jacobian that
    /// carries the Newton entropy error.
    pub fn burgers_split_matrix(&self, u: &[f64]) -> Matrix {
        let d = self.d1.matrix();
        let du = d.matvec(u);
        let n = self.grid.n;
        Matrix::from_fn(n, n, |i, j| d[(i, j)] * u[j] + if i == j { du[i] } else { 0.0 })
    }

    fn burgers_rhs_into(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        let mut du = vec![0.0; n];
        self.d1.apply_into(u, &mut du);
        self.d1.apply_into(&sq, out);
        for i in 0..n {
            out[i] = -2.0 * (out[i] + u[i] * du[i]);
        }
    }

    fn burgers_jacobian_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let n = u.len();
        let uv: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        self.d1.apply_into(u, &mut du);
        self.d1.apply_into(v, &mut dv);
        self.d1.apply_into(&uv, out);
        for i in 0..n {
            out[i] = -2.0 * (2.0 * out[i] + v[i] * du[i] + u[i] * dv[i]);
        }
    }

    fn burgers_jacobian_matrix(&self, u: &[f64]) -> Matrix {
        let d = self.d1.matrix();
        let du = d.matvec(u);
        let n = self.grid.n;
        Matrix::from_fn(n, n, |i, j| {
            let diag = if i == j { du[i] } else { 0.0 };
            -2.0 * (2.0 * d[(i, j)] * u[j] + diag + u[i] * d[(i, j)])
        })
    }

    /// `−(I − D2)⁻¹ K` with `K` assembled densely.
    fn bbm_jacobian_matrix(&self, u: &[f64]) -> Matrix {
        let d = self.d1.matrix();
        let du = d.matvec(u);
        let n = self.grid.n;
        let k = match self.equation {
            Equation::BbmSplit => Matrix::from_fn(n, n, |i, j| {
                let diag = if i == j { du[i] / 3.0 } else { 0.0 };
                d[(i, j)] * (2.0 / 3.0 * u[j] + u[i] / 3.0 + 1.0) + diag
            }),
            _ => Matrix::from_fn(n, n, |i, j| d[(i, j)] * (u[j] + 1.0)),
        };
        let mut jac = Matrix::zeros(n, n);
        for j in 0..n {
            let mut col: Vec<f64> = k.column(j);
            self.elliptic_solve_in_place(&mut col);
            col.iter_mut().for_each(|x| *x = -*x);
            jac.set_column(j, &col);
        }
        jac
    }
}

impl OdeRhs for SemiDiscretization {
    fn dim(&self) -> usize {
        self.grid.n
    }

    fn rhs_into(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        match self.equation {
            Equation::Burgers => self.burgers_rhs_into(u, out),
            Equation::Kdv => {
                self.burgers_rhs_into(u, out);
                let mut d3u = vec![0.0; n];
                self.aux.as_ref().unwrap().apply_into(u, &mut d3u);
                for (o, x) in out.iter_mut().zip(&d3u) {
                    *o -= x;
                }
            }
            Equation::BbmSplit => {
                let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
                let mut du = vec![0.0; n];
                self.d1.apply_into(u, &mut du);
                self.d1.apply_into(&sq, out);
                for i in 0..n {
                    out[i] = -(out[i] / 3.0 + u[i] * du[i] / 3.0 + du[i]);
                }
                self.elliptic_solve_in_place(out);
            }
            Equation::BbmCentral => {
                let flux: Vec<f64> = u.iter().map(|x| 0.5 * x * x + x).collect();
                self.d1.apply_into(&flux, out);
                out.iter_mut().for_each(|x| *x = -*x);
                self.elliptic_solve_in_place(out);
            }
        }
    }

    fn jacobian_apply_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let n = u.len();
        match self.equation {
            Equation::Burgers => self.burgers_jacobian_into(u, v, out),
            Equation::Kdv => {
                self.burgers_jacobian_into(u, v, out);
                let mut d3v = vec![0.0; n];
                self.aux.as_ref().unwrap().apply_into(v, &mut d3v);
                for (o, x) in out.iter_mut().zip(&d3v) {
                    *o -= x;
                }
            }
            Equation::BbmSplit => {
                let uv: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
                let mut du = vec![0.0; n];
                let mut dv = vec![0.0; n];
                self.d1.apply_into(u, &mut du);
                self.d1.apply_into(v, &mut dv);
                self.d1.apply_into(&uv, out);
                for i in 0..n {
                    out[i] = -(2.0 / 3.0 * out[i] + (v[i] * du[i] + u[i] * dv[i]) / 3.0 + dv[i]);
                }
                self.elliptic_solve_in_place(out);
            }
            Equation::BbmCentral => {
                let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b + b).collect();
                self.d1.apply_into(&w, out);
                out.iter_mut().for_each(|x| *x = -*x);
                self.elliptic_solve_in_place(out);
            }
        }
    }

    fn jacobian_matrix(&self, u: &[f64]) -> Matrix {
        match self.equation {
            Equation::Burgers => self.burgers_jacobian_matrix(u),
            Equation::Kdv => {
                let mut j = self.burgers_jacobian_matrix(u);
                j.add_scaled(-1.0, self.aux.as_ref().unwrap().matrix());
                j
            }
            Equation::BbmSplit | Equation::BbmCentral => self.bbm_jacobian_matrix(u),
        }
    }

    /// Burgers/KdV: `−2(D diag(u) + diag(u) D)` (minus `D3` for KdV). Both
    /// terms are skew in the sense `vᵀ(D diag(u) + diag(u) D)v = 0`.
    fn neutral_jacobian_matrix(&self, u: &[f64]) -> Option<Matrix> {
        let d = self.d1.matrix();
        let n = self.grid.n;
        let base = || Matrix::from_fn(n, n, |i, j| -2.0 * d[(i, j)] * (u[j] + u[i]));
        match self.equation {
            Equation::Burgers => Some(base()),
            Equation::Kdv => {
                let mut m = base();
                m.add_scaled(-1.0, self.aux.as_ref().unwrap().matrix());
                Some(m)
            }
            _ => None,
        }
    }

    fn norm_weight(&self) -> f64 {
        self.grid.dx()
    }
}
