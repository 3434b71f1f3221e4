//! Periodic derivative operators on uniform grids.
//!
//! Two families are provided: classical central finite differences and
//! Fourier collocation. Both are circulant, stored densely, and carry the
//! structural facts the entropy analysis relies on: odd derivatives are
//! skew-symmetric, the second derivative is symmetric negative semidefinite,
//! and the mass matrix is `dx·I`.

use crate::linalg::{LinalgError, Matrix};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("unsupported combination: derivative order {deriv_order}, accuracy order {accuracy_order}")]
    Unsupported {
        deriv_order: usize,
        accuracy_order: usize,
    },
    #[error("grid of {n} nodes is too small for a stencil of width {width}")]
    GridTooSmall { n: usize, width: usize },
    #[error("Fourier collocation needs an even node count, got {0}")]
    OddNodeCount(usize),
    #[error("grid spacing and domain length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    Skew,
    SymmetricNegativeSemidefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorFamily {
    CentralFd,
    Fourier,
}

impl OperatorFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            OperatorFamily::CentralFd => "central-fd",
            OperatorFamily::Fourier => "fourier",
        }
    }
}

impl std::str::FromStr for OperatorFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "central-fd" | "central_fd" | "fd" => Ok(OperatorFamily::CentralFd),
            "fourier" => Ok(OperatorFamily::Fourier),
            other => Err(format!("unknown operator family `{other}`")),
        }
    }
}

/// Diagonal mass matrix (quadrature weights).
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    weights: Vec<f64>,
}

impl MassMatrix {
    pub fn uniform(n: usize, dx: f64) -> Self {
        assert!(dx > 0.0, "mass weights must be positive");
        Self {
            weights: vec![dx; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `aᵀ M b`
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// `1ᵀ M a`
    pub fn integrate(&self, a: &[f64]) -> f64 {
        self.weights.iter().zip(a).map(|(w, x)| w * x).sum()
    }
}

/// A periodic (circulant) derivative operator.
#[derive(Debug, Clone)]
pub struct GridOperator {
    n: usize,
    dx: f64,
    deriv_order: usize,
    symmetry: Symmetry,
    family: OperatorFamily,
    matrix: Matrix,
    /// Nonzero `(offset, weight)` pairs of the first row when the operator is
    /// banded; `None` for dense (spectral) operators.
    stencil: Option<Vec<(usize, f64)>>,
}

impl GridOperator {
    fn circulant(
        first_row: &[f64],
        dx: f64,
        deriv_order: usize,
        family: OperatorFamily,
    ) -> Self {
        let n = first_row.len();
        let matrix = Matrix::from_fn(n, n, |i, j| first_row[(j + n - i) % n]);
        let taps: Vec<(usize, f64)> = first_row
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(k, w)| (k, *w))
            .collect();
        let stencil = (taps.len() * 4 <= n).then_some(taps);
        let symmetry = if deriv_order % 2 == 1 {
            Symmetry::Skew
        } else {
            Symmetry::SymmetricNegativeSemidefinite
        };
        Self {
            n,
            dx,
            deriv_order,
            symmetry,
            family,
            matrix,
            stencil,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn deriv_order(&self) -> usize {
        self.deriv_order
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn family(&self) -> OperatorFamily {
        self.family
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn mass(&self) -> MassMatrix {
        MassMatrix::uniform(self.n, self.dx)
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if u.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                got: u.len(),
            }
            .into());
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// Unchecked-length variant of [`apply`](Self::apply) for hot loops.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        match &self.stencil {
            Some(taps) => {
                let n = self.n;
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(k, w) in taps {
                        let j = i + k;
                        acc += w * u[if j >= n { j - n } else { j }];
                    }
                    *o = acc;
                }
            }
            None => self.matrix.matvec_into(u, out),
        }
    }
}

/// Finite-difference weights for the `m`-th derivative at `x0` on the nodes
/// `xs` (Fornberg's recursion). Returns one weight per node.
pub(crate) fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Half-width of the classical central stencil for derivative `m` at even
/// accuracy order `p`.
fn central_half_width(m: usize, p: usize) -> usize {
    (m + 1) / 2 + p / 2 - 1
}

/// Central stencil weights on offsets `-h..=h` (unit spacing), with exact
/// (anti)symmetry imposed.
pub fn central_stencil(deriv_order: usize, accuracy_order: usize) -> Result<Vec<f64>, OperatorError> {
    if !(1..=3).contains(&deriv_order)
        || accuracy_order < 2
        || accuracy_order % 2 != 0
        || accuracy_order > 12
    {
        return Err(OperatorError::Unsupported {
            deriv_order,
            accuracy_order,
        });
    }
    let h = central_half_width(deriv_order, accuracy_order);
    let xs: Vec<f64> = (-(h as i64)..=h as i64).map(|k| k as f64).collect();
    let mut w = fornberg_weights(0.0, &xs, deriv_order);
    let sign = if deriv_order % 2 == 1 { -1.0 } else { 1.0 };
    for k in 1..=h {
        let avg = 0.5 * (w[h + k] + sign * w[h - k]);
        w[h + k] = avg;
        w[h - k] = sign * avg;
    }
    if deriv_order % 2 == 1 {
        w[h] = 0.0;
    } else {
        // rows must sum to zero exactly
        let off: f64 = w.iter().enumerate().filter(|(i, _)| *i != h).map(|(_, x)| x).sum();
        w[h] = -off;
    }
    Ok(w)
}

/// Circulant central finite-difference operator for derivative order 1, 2 or 3.
pub fn make_central_fd(
    deriv_order: usize,
    accuracy_order: usize,
    n: usize,
    dx: f64,
) -> Result<GridOperator, OperatorError> {
    if !(dx > 0.0) {
        return Err(OperatorError::NonPositiveLength(dx));
    }
    let w = central_stencil(deriv_order, accuracy_order)?;
    let width = w.len();
    if n <= width {
        return Err(OperatorError::GridTooSmall { n, width });
    }
    let h = width / 2;
    let scale = dx.powi(deriv_order as i32);
    let mut row = vec![0.0; n];
    for (idx, &wk) in w.iter().enumerate() {
        let offset = idx as i64 - h as i64;
        let col = offset.rem_euclid(n as i64) as usize;
        row[col] += wk / scale;
    }
    Ok(GridOperator::circulant(
        &row,
        dx,
        deriv_order,
        OperatorFamily::CentralFd,
    ))
}

/// Fourier collocation differentiation matrix (order 1 or 2) on `n` equispaced
/// nodes of a periodic domain of length `domain_length`.
pub fn make_fourier(
    deriv_order: usize,
    n: usize,
    domain_length: f64,
) -> Result<GridOperator, OperatorError> {
    if !(domain_length > 0.0) {
        return Err(OperatorError::NonPositiveLength(domain_length));
    }
    if n % 2 != 0 {
        return Err(OperatorError::OddNodeCount(n));
    }
    if n < 2 {
        return Err(OperatorError::GridTooSmall { n, width: 2 });
    }
    let h = 2.0 * PI / n as f64;
    let k = 2.0 * PI / domain_length;
    let mut row = vec![0.0; n];
    match deriv_order {
        1 => {
            for (j, r) in row.iter_mut().enumerate().skip(1) {
                let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
                // entry (0, j) = -½(-1)^j cot(jh/2); column offset j means i - j = -j
                *r = -0.5 * sgn / (0.5 * j as f64 * h).tan() * k;
            }
            for j in 1..n / 2 {
                let avg = 0.5 * (row[j] - row[n - j]);
                row[j] = avg;
                row[n - j] = -avg;
            }
            row[n / 2] = 0.0;
        }
        2 => {
            let k2 = k * k;
            row[0] = (-PI * PI / (3.0 * h * h) - 1.0 / 6.0) * k2;
            for (j, r) in row.iter_mut().enumerate().skip(1) {
                let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
                let s = (0.5 * j as f64 * h).sin();
                *r = -0.5 * sgn / (s * s) * k2;
            }
            for j in 1..n / 2 {
                let avg = 0.5 * (row[j] + row[n - j]);
                row[j] = avg;
                row[n - j] = avg;
            }
        }
        _ => {
            return Err(OperatorError::Unsupported {
                deriv_order,
                accuracy_order: 0,
            })
        }
    }
    Ok(GridOperator::circulant(
        &row,
        domain_length / n as f64,
        deriv_order,
        OperatorFamily::Fourier,
    ))
}
