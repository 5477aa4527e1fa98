#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use qtraj::basis::OccupationBasis;
use qtraj::linalg::{LinearOperator, StateVector, C64};
use qtraj::model::{Jump, LindbladModel};
use qtraj::rng::RngStream;
use qtraj::stats::Estimate;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn random_complex(rng: &mut RngStream) -> C64 {
    c(rng.uniform() - 0.5, rng.uniform() - 0.5)
}

pub fn random_operator(rng: &mut RngStream, dim: usize, scale: f64) -> LinearOperator {
    let data: Vec<C64> = (0..dim * dim).map(|_| random_complex(rng) * scale).collect();
    LinearOperator::from_dense(dim, dim, &data).unwrap()
}

pub fn random_hermitian(rng: &mut RngStream, dim: usize, scale: f64) -> LinearOperator {
    let a = random_operator(rng, dim, scale);
    a.add(&a.adjoint()).unwrap().scale_real(0.5).with_hermitian_hint().unwrap()
}

pub fn random_state(rng: &mut RngStream, dim: usize) -> StateVector {
    StateVector::new((0..dim).map(|_| random_complex(rng)).collect()).normalized().unwrap()
}

/// `A A† / Tr[A A†]` for a random `A`.
pub fn random_density(rng: &mut RngStream, dim: usize) -> DMatrix<C64> {
    let a = random_operator(rng, dim, 1.0).to_dense();
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

pub fn random_model(rng: &mut RngStream, dim: usize, n_jumps: usize) -> LindbladModel {
    let h = random_hermitian(rng, dim, 2.0);
    let jumps = (0..n_jumps)
        .map(|m| Jump::with_rate(format!("c{m}"), &random_operator(rng, dim, 1.0), 0.5).unwrap())
        .collect();
    LindbladModel::new("random", h, jumps).unwrap()
}

/// Cyclic site translation `|n_0, ..., n_{L-1}⟩ → |n_{L-1}, n_0, ...⟩`.
pub fn translation(basis: &OccupationBasis) -> LinearOperator {
    let trip: Vec<(usize, usize, C64)> = basis
        .states()
        .iter()
        .enumerate()
        .map(|(col, s)| {
            let mut shifted = s.clone();
            shifted.rotate_right(1);
            (basis.index_of(&shifted).unwrap(), col, c(1.0, 0.0))
        })
        .collect();
    LinearOperator::from_triplets(basis.dim(), basis.dim(), trip).unwrap()
}

/// Whether `exact` is within `k` standard errors of the estimate. A zero
/// standard error is compared with absolute tolerance 1e-9.
pub fn within(est: &Estimate, exact: C64, k: f64) -> bool {
    let diff = (est.mean() - exact).norm();
    match est.stderr_abs() {
        Some(s) if s > 0.0 => diff <= k * s,
        _ => diff <= 1e-9,
    }
}

/// Whether two estimates agree within `k` combined standard errors.
pub fn agree(a: &Estimate, b: &Estimate, k: f64) -> bool {
    let diff = (a.mean() - b.mean()).norm();
    let sa = a.stderr_abs().unwrap_or(0.0);
    let sb = b.stderr_abs().unwrap_or(0.0);
    let s = sa.hypot(sb);
    if s > 0.0 {
        diff <= k * s
    } else {
        diff <= 1e-9
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `∫ dΩ_u N(u) e^{−i z u·ẑ}` with the dipole pattern `N(u) = 3/(8π)(1 − (d̂·u)²)`
/// and `d̂·ẑ = cos_angle`.
pub fn kernel_by_quadrature(z: f64, cos_angle: f64) -> f64 {
    let nodes = gauss_legendre(64);
    let n_phi = 64;
    let sin_angle = (1.0 - cos_angle * cos_angle).sqrt();
    let mut total = c(0.0, 0.0);
    for &(ct, w) in &nodes {
        let st = (1.0 - ct * ct).sqrt();
        for k in 0..n_phi {
            let phi = 2.0 * PI * k as f64 / n_phi as f64;
            let d_dot_u = sin_angle * st * phi.cos() + cos_angle * ct;
            let pattern = 3.0 / (8.0 * PI) * (1.0 - d_dot_u * d_dot_u);
            total += w * (2.0 * PI / n_phi as f64) * pattern * expi(-z * ct);
        }
    }
    assert!(total.im.abs() < 1e-12);
    total.re
}

pub fn expi(x: f64) -> qtraj::linalg::C64 {
    c(x.cos(), x.sin())
}
