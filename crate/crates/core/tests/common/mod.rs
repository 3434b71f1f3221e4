//! Checks shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod studies;

use entropic::linalg::Matrix;
use entropic::operators::{make_central_fd, make_fourier, GridOperator, OperatorFamily, Symmetry};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Every supported central stencil and a couple of Fourier operators.
pub fn operator_zoo() -> Vec<GridOperator> {
    let mut ops = Vec::new();
    for m in 1..=3 {
        for p in (2..=12).step_by(2) {
            for n in [33, 64] {
                ops.push(make_central_fd(m, p, n, 20.0 / n as f64).unwrap());
            }
        }
    }
    for m in 1..=2 {
        for n in [16, 64] {
            ops.push(make_fourier(m, n, 180.0).unwrap());
        }
    }
    ops
}

fn describe(op: &GridOperator) -> String {
    format!("{:?} d{} n={}", op.family(), op.deriv_order(), op.n())
}

/// Skew/symmetric structure, semidefiniteness, constant annihilation and
/// circulant shifts of one operator.
pub fn check_structure(op: &GridOperator, rng: &mut StdRng) -> Result<(), String> {
    let d = op.matrix();
    let n = op.n();
    let scale = d.max_abs();
    let dt = d.transpose();
    let mass = op.mass();
    match op.symmetry() {
        Symmetry::Skew => {
            let mut s = d.clone();
            s.add_scaled(1.0, &dt);
            if s.max_abs() > 1e-13 * scale {
                return Err(format!("{}: max|D + Dᵀ| = {:e}", describe(op), s.max_abs()));
            }
            for _ in 0..20 {
                let u = random_vec(rng, n);
                let q = mass.inner(&u, &d.matvec(&u));
                if q.abs() > 1e-12 * mass.inner(&u, &u) {
                    return Err(format!("{}: uᵀMDu = {q:e}", describe(op)));
                }
            }
        }
        Symmetry::SymmetricNegativeSemidefinite => {
            if d.max_abs_diff(&dt) > 1e-13 * scale {
                return Err(format!("{}: not symmetric", describe(op)));
            }
            for _ in 0..20 {
                let v = random_vec(rng, n);
                let q: f64 = v.iter().zip(d.matvec(&v)).map(|(a, b)| a * b).sum();
                if q > 1e-10 * v.iter().map(|x| x * x).sum::<f64>() {
                    return Err(format!("{}: vᵀDv = {q:e} > 0", describe(op)));
                }
            }
        }
    }
    let d1 = d.matvec(&vec![1.0; n]);
    let norm = d1.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        return Err(format!("{}: ‖D·1‖ = {norm:e}", describe(op)));
    }
    for i in 0..n {
        for j in 0..n {
            if d[(i, j)] != d[(0, (j + n - i) % n)] {
                return Err(format!("{}: row {i} is not a shift of row 0", describe(op)));
            }
        }
    }
    Ok(())
}

pub fn check_fourier_commutation(n: usize, l: f64) -> Result<(), String> {
    let d1 = make_fourier(1, n, l).unwrap();
    let d2 = make_fourier(2, n, l).unwrap();
    let mut c = d1.matrix().matmul(d2.matrix());
    c.add_scaled(-1.0, &d2.matrix().matmul(d1.matrix()));
    if c.max_abs() > 1e-10 {
        return Err(format!("Fourier n={n}: max|D1D2 − D2D1| = {:e}", c.max_abs()));
    }
    Ok(())
}

/// `k`-th derivative of `exp(sin(2πx/L))`.
fn smooth(x: f64, l: f64, k: usize) -> f64 {
    let w = 2.0 * PI / l;
    let (s, c) = ((w * x).sin(), (w * x).cos());
    let e = s.exp();
    match k {
        0 => e,
        1 => w * c * e,
        2 => w * w * e * (c * c - s),
        3 => w.powi(3) * e * (c.powi(3) - 3.0 * s * c - c),
        _ => unreachable!(),
    }
}

pub fn max_error(op: &GridOperator, l: f64) -> f64 {
    let n = op.n();
    let dx = l / n as f64;
    let x: Vec<f64> = (1..=n).map(|j| -0.5 * l + j as f64 * dx).collect();
    let u: Vec<f64> = x.iter().map(|&x| smooth(x, l, 0)).collect();
    let du = op.apply(&u).unwrap();
    x.iter()
        .zip(&du)
        .map(|(&x, d)| (d - smooth(x, l, op.deriv_order())).abs())
        .fold(0.0, f64::max)
}

/// Observed orders of central differences under three grid doublings.
pub fn check_convergence_orders() -> Result<Vec<(usize, usize, f64)>, String> {
    let l = 20.0;
    let mut report = Vec::new();
    for m in 1..=3 {
        for p in [2, 4, 6] {
            let errs: Vec<f64> = [40, 80, 160, 320]
                .iter()
                .map(|&n| max_error(&make_central_fd(m, p, n, l / n as f64).unwrap(), l))
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                report.push((m, p, order));
                if (order - p as f64).abs() > 0.2 {
                    return Err(format!("d{m} accuracy {p}: observed order {order:.3} ({errs:?})"));
                }
            }
        }
    }
    Ok(report)
}

/// Derivatives of `sin(2πx/L)` with the Fourier operators.
pub fn check_fourier_sine() -> Result<(), String> {
    let (n, l) = (64, 20.0);
    let w = 2.0 * PI / l;
    let dx = l / n as f64;
    let x: Vec<f64> = (1..=n).map(|j| -10.0 + j as f64 * dx).collect();
    let u: Vec<f64> = x.iter().map(|&x| (w * x).sin()).collect();
    let d1 = make_fourier(1, n, l).unwrap().apply(&u).unwrap();
    let d2 = make_fourier(2, n, l).unwrap().apply(&u).unwrap();
    let e1 = x.iter().zip(&d1).map(|(&x, d)| (d - w * (w * x).cos()).abs()).fold(0.0, f64::max);
    let e2 = x.iter().zip(&d2).map(|(&x, d)| (d + w * w * (w * x).sin()).abs()).fold(0.0, f64::max);
    if e1 > 1e-11 || e2 > 1e-10 {
        return Err(format!("Fourier sine derivatives: D1 error {e1:e}, D2 error {e2:e}"));
    }
    Ok(())
}

pub fn dense(op: &GridOperator) -> &Matrix {
    op.matrix()
}

pub fn family_tag(op: &GridOperator) -> &'static str {
    match op.family() {
        OperatorFamily::CentralFd => "fd",
        OperatorFamily::Fourier => "fourier",
    }
}
