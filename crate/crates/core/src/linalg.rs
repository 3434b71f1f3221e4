//! Minimal dense linear algebra.
//!
//! A row-major [`Matrix`], LU factorization with partial pivoting, and
//! unrestarted GMRES (modified Gram-Schmidt Arnoldi with Givens rotations).
//! Everything here is sized for desk-scale problems (a few hundred unknowns).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent partial sums let the compiler vectorize the loop
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        assert_eq!(col.len(), self.rows);
        for (i, &x) in col.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    /// `out = self * x` without allocation.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec: input length");
        assert_eq!(out.len(), self.rows, "matvec: output length");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `selfᵀ x`
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(i));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(s, &other.data, &mut self.data);
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    /// Entrywise maximum of `|self - other|`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factors of `PA = LU`, stored compactly (unit lower triangle implied).
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuFactorization {
    pub fn new(a: &Matrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);

        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= scale * f64::EPSILON * n as f64 {
                return Err(LinalgError::Singular {
                    column: k,
                    pivot: lu[(p, k)],
                });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let diag = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / diag;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= factor * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Unit lower triangular factor.
    pub fn l(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lu[(i, j)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    pub fn u(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| if i <= j { self.lu[(i, j)] } else { 0.0 })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s = dot(&row[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }
}

pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.rows(),
            got: b.len(),
        });
    }
    LuFactorization::new(a)?.solve(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovReport {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` at exit (estimated from the Givens recurrence).
    pub relative_residual: f64,
    /// Relative residual after each Arnoldi step, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Unrestarted GMRES for `Ax = b` starting from `x0`.
///
/// Stops once `‖b − Ax‖ ≤ rel_tol·‖b‖` or after `max_dim` Arnoldi steps. A
/// happy breakdown (new Krylov direction of norm ~0) means the solution lies
/// in the current space and is reported as converged.
pub fn gmres<A>(
    mut apply: A,
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    max_dim: usize,
) -> (Vec<f64>, KrylovReport)
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x0.len(), n, "gmres: initial guess length");
    let mut x = x0.to_vec();

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (
            x,
            KrylovReport {
                iterations: 0,
                relative_residual: 0.0,
                residual_history: vec![0.0],
                converged: true,
            },
        );
    }

    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let beta = norm2(&r);
    let mut history = vec![beta / b_norm];
    if beta <= rel_tol * b_norm {
        return (
            x,
            KrylovReport {
                iterations: 0,
                relative_residual: beta / b_norm,
                residual_history: history,
                converged: true,
            },
        );
    }

    let max_dim = max_dim.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_dim + 1);
    basis.push(r.iter().map(|v| v / beta).collect());
    // Columns of the Hessenberg matrix, already rotated.
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(max_dim);
    let mut cs: Vec<f64> = Vec::with_capacity(max_dim);
    let mut sn: Vec<f64> = Vec::with_capacity(max_dim);
    let mut g = vec![beta];

    let mut converged = false;
    let mut k = 0;
    let mut w = vec![0.0; n];
    while k < max_dim {
        apply(&basis[k], &mut w);
        let w_norm0 = norm2(&w);
        let mut col = vec![0.0; k + 2];
        // modified Gram-Schmidt, repeated once when cancellation is severe
        // ("twice is enough") so the basis stays orthonormal to working
        // precision even when the Krylov space is nearly degenerate
        let mut h_next = w_norm0;
        for _ in 0..2 {
            let before = h_next;
            for (j, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[j] += hij;
                axpy(-hij, v, &mut w);
            }
            h_next = norm2(&w);
            if h_next > 0.5 * before {
                break;
            }
        }
        col[k + 1] = h_next;

        for j in 0..k {
            let (a, bb) = (col[j], col[j + 1]);
            col[j] = cs[j] * a + sn[j] * bb;
            col[j + 1] = -sn[j] * a + cs[j] * bb;
        }
        let (a, bb) = (col[k], col[k + 1]);
        let rho = a.hypot(bb);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, bb / rho) };
        col[k] = rho;
        col[k + 1] = 0.0;
        cs.push(c);
        sn.push(s);
        let gk = g[k];
        g[k] = c * gk;
        g.push(-s * gk);
        col.truncate(k + 1);
        h.push(col);
        k += 1;

        let res = g[k].abs();
        history.push(res / b_norm);
        let breakdown = h_next <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);
        if res <= rel_tol * b_norm || breakdown {
            converged = true;
            break;
        }
        basis.push(w.iter().map(|v| v / h_next).collect());
    }

    // Back substitution on the rotated triangular system.
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in (i + 1)..k {
            s -= h[j][i] * y[j];
        }
        y[i] = s / h[i][i];
    }
    for (j, yj) in y.iter().enumerate() {
        axpy(*yj, &basis[j], &mut x);
    }

    let relative_residual = *history.last().unwrap();
    (
        x,
        KrylovReport {
            iterations: k,
            relative_residual,
            residual_history: history,
            converged: converged || relative_residual <= rel_tol,
        },
    )
}

/// Arnoldi basis of `K_m(A, r0)` built with modified Gram-Schmidt. Exposed for
/// orthogonality diagnostics.
pub fn arnoldi_basis<A>(mut apply: A, r0: &[f64], m: usize) -> Vec<Vec<f64>>
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = r0.len();
    let beta = norm2(r0);
    let mut basis = vec![r0.iter().map(|v| v / beta).collect::<Vec<_>>()];
    let mut w = vec![0.0; n];
    for k in 0..m.min(n).saturating_sub(1) {
        apply(&basis[k], &mut w);
        for _ in 0..2 {
            for v in &basis {
                let hij = dot(&w, v);
                axpy(-hij, v, &mut w);
            }
        }
        let nrm = norm2(&w);
        if nrm <= 1e-14 {
            break;
        }
        basis.push(w.iter().map(|v| v / nrm).collect());
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_well_conditioned(n: usize, seed: u64) -> Matrix {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    fn residual_norm(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
        let ax = a.matvec(x);
        norm2(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>())
    }

    #[test]
    fn lu_identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let x = lu_solve(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn lu_diagonal_two_by_two() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let x = lu_solve(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lu_random_residual_and_reconstruction() {
        let a = random_well_conditioned(50, 7);
        let mut rng = StdRng::seed_from_u64(8);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = lu_solve(&a, &b).unwrap();
        let bound = 1e-10 * (a.max_abs() * 50.0 * max_abs(&x) + norm2(&b));
        assert!(residual_norm(&a, &x, &b) <= bound);

        let f = LuFactorization::new(&a).unwrap();
        let pa = Matrix::from_fn(50, 50, |i, j| a[(f.permutation()[i], j)]);
        let lu = f.l().matmul(&f.u());
        assert!(pa.max_abs_diff(&lu) <= 1e-12 * a.max_abs());
    }

    #[test]
    fn lu_rejects_singular_and_bad_shapes() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            LuFactorization::new(&a),
            Err(LinalgError::Singular { .. })
        ));
        assert!(matches!(
            LuFactorization::new(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
        assert!(matches!(
            lu_solve(&Matrix::identity(2), &[1.0]),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gmres_identity_one_iteration() {
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let (x, rep) = gmres(|v, o| o.copy_from_slice(v), &b, &[0.0; 4], 1e-12, 4);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn gmres_matches_lu_and_history_nonincreasing() {
        let n = 40;
        let a = random_well_conditioned(n, 11);
        let mut rng = StdRng::seed_from_u64(12);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = lu_solve(&a, &b).unwrap();
        let (x, rep) = gmres(|v, o| a.matvec_into(v, o), &b, &vec![0.0; n], 1e-10, n);
        assert!(rep.converged);
        let err = x.iter().zip(&direct).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "err = {err}");
        assert!(rep.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn gmres_full_dimension_with_zero_tolerance() {
        let n = 25;
        let mut rng = StdRng::seed_from_u64(3);
        // Nonsymmetric, modestly conditioned.
        let a = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                3.0
            } else {
                rng.gen_range(-0.3..0.3)
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, rep) = gmres(|v, o| a.matvec_into(v, o), &b, &vec![0.0; n], 0.0, n);
        assert!(rep.iterations <= n);
        assert!(residual_norm(&a, &x, &b) <= 1e-10 * norm2(&b));
    }

    #[test]
    fn gmres_unconverged_when_dimension_capped() {
        let n = 30;
        let a = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 + i as f64 } else { 0.0 });
        let b = vec![1.0; n];
        let (_, rep) = gmres(|v, o| a.matvec_into(v, o), &b, &vec![0.0; n], 1e-12, 3);
        assert_eq!(rep.iterations, 3);
        assert!(!rep.converged);
    }

    #[test]
    fn arnoldi_basis_is_orthonormal() {
        let n = 40;
        let a = random_well_conditioned(n, 21);
        let r0: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.3).cos()).collect();
        let basis = arnoldi_basis(|v, o| a.matvec_into(v, o), &r0, 30);
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let d = dot(&basis[i], &basis[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() <= 1e-10, "({i},{j}) = {d}");
            }
        }
    }
}
