//! Dense Lindblad integration for small systems.
//!
//! The right-hand side is evaluated in the form
//! `dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ_m c_m ρ c_m†` on the full
//! (direct-sum) space of the model. Matrices are stored column-major by
//! `nalgebra`, so the implied vectorization is column stacking.
//!
//! Integration uses classical RK4 with fixed steps that land exactly on the
//! report times. The step is halved until two successive runs agree to the
//! requested tolerance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, StateVector, C64, DENSE_LIMIT, ZERO};
use crate::model::LindbladModel;
use crate::trajectory::Schedule;

const TRACE_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 8;

pub type DensityMatrix = DMatrix<C64>;

/// Step size and agreement tolerance for [`integrate_master`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub dt: f64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { dt: 0.01, tol: 1e-8 }
    }
}

/// `|ψ⟩⟨ψ|` for a state in `sector`, embedded in the full space.
pub fn pure_density(model: &LindbladModel, sector: usize, psi: &StateVector) -> Result<DensityMatrix> {
    let v = nalgebra::DVector::from_vec(model.embed_state(sector, psi.amplitudes())?);
    Ok(&v * v.adjoint())
}

/// `Tr[op ρ]`.
pub fn expectation_dm(op: &LinearOperator, rho: &DensityMatrix) -> Result<C64> {
    if op.dim_in() != rho.nrows() || op.dim_out() != rho.nrows() {
        return Err(Error::DimensionMismatch { expected: rho.nrows(), found: op.dim_in() });
    }
    Ok(op.triplets().map(|(r, c, v)| v * rho[(c, r)]).sum())
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho * rho).trace().re
}

/// Dense generator data for one model.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    heff: DMatrix<C64>,
    heff_adj: DMatrix<C64>,
    jumps: Vec<DMatrix<C64>>,
    jumps_adj: Vec<DMatrix<C64>>,
}

impl Liouvillian {
    pub fn new(model: &LindbladModel) -> Result<Self> {
        let dim = model.dim();
        if dim > DENSE_LIMIT {
            return Err(Error::SizeExceeded { dim, max: DENSE_LIMIT });
        }
        let jumps: Vec<DMatrix<C64>> = model.full_jumps()?.iter().map(|j| j.to_dense()).collect();
        let h = model.full_hamiltonian()?.to_dense();
        let mut decay = DMatrix::from_element(dim, dim, ZERO);
        for c in &jumps {
            decay += c.adjoint() * c;
        }
        let heff = h - decay * C64::new(0.0, 0.5);
        let heff_adj = heff.adjoint();
        let jumps_adj = jumps.iter().map(|c| c.adjoint()).collect();
        Ok(Self { heff, heff_adj, jumps, jumps_adj })
    }

    pub fn dim(&self) -> usize {
        self.heff.nrows()
    }

    /// `−i(H_eff X − X H_eff†) + Σ c X c†`; also valid for non-Hermitian `X`.
    pub fn apply(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = (&self.heff * x - x * &self.heff_adj) * C64::new(0.0, -1.0);
        for (c, cd) in self.jumps.iter().zip(&self.jumps_adj) {
            out += c * x * cd;
        }
        out
    }

    fn rk4_step(&self, x: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
        let half = C64::new(h / 2.0, 0.0);
        let full = C64::new(h, 0.0);
        let k1 = self.apply(x);
        let k2 = self.apply(&(x + &k1 * half));
        let k3 = self.apply(&(x + &k2 * half));
        let k4 = self.apply(&(x + &k3 * full));
        x + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
    }
}

/// Right-hand side of the master equation at `rho`.
pub fn lindblad_rhs(model: &LindbladModel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let l = Liouvillian::new(model)?;
    if rho.nrows() != l.dim() || rho.ncols() != l.dim() {
        return Err(Error::DimensionMismatch { expected: l.dim(), found: rho.nrows() });
    }
    Ok(l.apply(rho))
}

/// Fixed-step RK4 over piecewise-constant generators `(until, L)`, starting
/// at `t0`. Every report time and generator boundary is hit exactly.
fn integrate_fixed(
    segments: &[(f64, Liouvillian)],
    x0: &DMatrix<C64>,
    t0: f64,
    report_times: &[f64],
    dt: f64,
) -> Vec<DMatrix<C64>> {
    let mut x = x0.clone();
    let mut t = t0;
    let mut out = Vec::with_capacity(report_times.len());
    for &tr in report_times {
        while t < tr {
            let idx = segments.iter().position(|(until, _)| t < *until).unwrap_or(segments.len() - 1);
            let (until, l) = &segments[idx];
            let stop = tr.min(*until);
            let n = (((stop - t) / dt) - 1e-9).ceil().max(1.0);
            let h = (stop - t) / n;
            for _ in 0..n as usize {
                x = l.rk4_step(&x, h);
            }
            t = stop;
        }
        out.push(x.clone());
    }
    out
}

fn max_difference(a: &[DMatrix<C64>], b: &[DMatrix<C64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max)
}

fn integrate_converged(
    segments: &[(f64, Liouvillian)],
    x0: &DMatrix<C64>,
    t0: f64,
    report_times: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<DMatrix<C64>>> {
    if !(cfg.dt > 0.0) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("oracle dt and tol must be positive".into()));
    }
    let mut last = t0;
    for &t in report_times {
        if !t.is_finite() || t < last {
            return Err(Error::InvalidArgument("report times must be finite, increasing and >= t0".into()));
        }
        last = t;
    }
    let mut dt = cfg.dt;
    let mut coarse = integrate_fixed(segments, x0, t0, report_times, dt);
    for _ in 0..MAX_HALVINGS {
        dt /= 2.0;
        let fine = integrate_fixed(segments, x0, t0, report_times, dt);
        let diff = max_difference(&coarse, &fine);
        if diff < cfg.tol {
            return Ok(fine);
        }
        coarse = fine;
    }
    let achieved = max_difference(&coarse, &integrate_fixed(segments, x0, t0, report_times, dt / 2.0));
    Err(Error::NoConvergence { achieved })
}

/// Check trace, Hermiticity and positivity of a density matrix.
pub fn check_density_matrix(rho: &DensityMatrix) -> Result<()> {
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
        return Err(Error::InvariantViolation(format!("trace is {tr}")));
    }
    let herm = (rho - rho.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if herm > HERMITIAN_TOL {
        return Err(Error::InvariantViolation(format!("Hermiticity deviation {herm:e}")));
    }
    let hermitian = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let min_eig = hermitian.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -POSITIVITY_TOL {
        return Err(Error::InvariantViolation(format!("eigenvalue {min_eig:e} below zero")));
    }
    Ok(())
}

/// `ρ(t)` at each report time, starting from `rho0` at `t = 0`.
pub fn integrate_master(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    report_times: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<DensityMatrix>> {
    let l = Liouvillian::new(model)?;
    integrate_segments(vec![(f64::INFINITY, l)], rho0, report_times, cfg)
}

/// [`integrate_master`] under a piecewise-constant schedule.
pub fn integrate_master_schedule(
    schedule: &Schedule,
    rho0: &DensityMatrix,
    report_times: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<DensityMatrix>> {
    let segments = schedule
        .segments()
        .iter()
        .map(|(until, m)| Ok((*until, Liouvillian::new(m)?)))
        .collect::<Result<Vec<_>>>()?;
    integrate_segments(segments, rho0, report_times, cfg)
}

fn integrate_segments(
    segments: Vec<(f64, Liouvillian)>,
    rho0: &DensityMatrix,
    report_times: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<DensityMatrix>> {
    let dim = segments[0].1.dim();
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho0.nrows() });
    }
    check_density_matrix(rho0)?;
    let out = integrate_converged(&segments, rho0, 0.0, report_times, cfg)?;
    for rho in &out {
        check_density_matrix(rho)?;
    }
    Ok(out)
}

/// `C(t, τ) = Tr[A Λ_τ(B ρ(t))]` by propagating `B ρ(t)` under the same
/// generator.
pub fn two_time_oracle(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t: f64,
    tau_grid: &[f64],
    a: &LinearOperator,
    b: &LinearOperator,
    cfg: &OracleConfig,
) -> Result<Vec<C64>> {
    let dim = model.dim();
    for op in [a, b] {
        if op.dim_in() != dim || op.dim_out() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: op.dim_in() });
        }
    }
    let rho_t = if t > 0.0 {
        integrate_master(model, rho0, &[t], cfg)?.remove(0)
    } else {
        rho0.clone()
    };
    let x0 = b.to_dense() * rho_t;
    let l = Liouvillian::new(model)?;
    let xs = integrate_converged(&[(f64::INFINITY, l)], &x0, 0.0, tau_grid, cfg)?;
    let a_dense = a.to_dense();
    Ok(xs.iter().map(|x| (&a_dense * x).trace()).collect())
}

/// `½ Σ |λ_i(ρ₁ − ρ₂)|`.
pub fn trace_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.shape() != rho2.shape() {
        return Err(Error::DimensionMismatch { expected: rho1.nrows(), found: rho2.nrows() });
    }
    let d = rho1 - rho2;
    let hermitian = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    Ok(0.5 * hermitian.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::model::Jump;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn two_level(omega: f64, delta: f64, gamma: f64) -> LindbladModel {
        let sx = LinearOperator::from_dense(2, 2, &[ZERO, ONE, ONE, ZERO]).unwrap();
        let proj = LinearOperator::real_diagonal(&[1.0, 0.0]);
        let sm = LinearOperator::from_triplets(2, 2, [(1, 0, ONE)]).unwrap();
        let h = sx.scale_real(-omega / 2.0).add(&proj.scale_real(-delta)).unwrap();
        LindbladModel::new("tl", h, vec![Jump::with_rate("decay", &sm, gamma).unwrap()]).unwrap()
    }

    fn diag_rho(pe: f64) -> DensityMatrix {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(pe, 0.0), c(1.0 - pe, 0.0)]))
    }

    fn random_hermitian_trace_one(seed: u64) -> DensityMatrix {
        let mut rng = crate::rng::RngStream::new(seed, 0);
        let a = DMatrix::from_fn(2, 2, |_, _| c(rng.uniform() - 0.5, rng.uniform() - 0.5));
        let h = &a * a.adjoint();
        let tr = h.trace();
        h / tr
    }

    #[test]
    fn rhs_is_traceless() {
        let m = two_level(0.7, 0.3, 0.4);
        for seed in 0..10 {
            let rho = random_hermitian_trace_one(seed);
            let rhs = lindblad_rhs(&m, &rho).unwrap();
            assert!(rhs.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn rhs_without_jumps_is_commutator() {
        let m = two_level(0.7, 0.3, 0.0);
        let h = m.full_hamiltonian().unwrap().to_dense();
        let rho = random_hermitian_trace_one(3);
        let expected = (&h * &rho - &rho * &h) * c(0.0, -1.0);
        assert!((lindblad_rhs(&m, &rho).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn rhs_pure_decay() {
        let gamma = 0.9;
        let m = two_level(0.0, 0.0, gamma);
        let rhs = lindblad_rhs(&m, &diag_rho(1.0)).unwrap();
        assert!((rhs[(0, 0)] - c(-gamma, 0.0)).norm() < 1e-15);
        assert!((rhs[(1, 1)] - c(gamma, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn decay_closed_form() {
        let gamma = 0.6;
        let m = two_level(0.0, 0.0, gamma);
        let times = [0.5, 1.0, 3.0, 6.0];
        let rhos = integrate_master(&m, &diag_rho(1.0), &times, &OracleConfig::default()).unwrap();
        for (t, rho) in times.iter().zip(&rhos) {
            assert!((rho[(0, 0)].re - (-gamma * t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn unitary_evolution_keeps_purity() {
        let m = two_level(1.0, 0.4, 0.0);
        let times: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let rhos = integrate_master(&m, &diag_rho(0.0), &times, &OracleConfig::default()).unwrap();
        for rho in &rhos {
            assert!((purity(rho) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_time_examples() {
        let gamma = 0.5;
        let m = two_level(0.0, 0.0, gamma);
        let sp = LinearOperator::from_triplets(2, 2, [(0, 1, ONE)]).unwrap();
        let sm = sp.adjoint();
        let t = 1.2;
        let taus = [0.0, 0.5, 1.0, 2.0];
        let cfg = OracleConfig::default();
        let corr = two_time_oracle(&m, &diag_rho(1.0), t, &taus, &sp, &sm, &cfg).unwrap();
        for (tau, cv) in taus.iter().zip(&corr) {
            let exact = (-gamma * t).exp() * (-gamma * tau / 2.0).exp();
            assert!((cv - c(exact, 0.0)).norm() < 1e-9);
        }

        let driven = two_level(1.0, 0.2, 0.3);
        let id = LinearOperator::identity(2);
        let rho0 = diag_rho(0.0);
        let rho_t = integrate_master(&driven, &rho0, &[t], &cfg).unwrap().remove(0);
        let b_mean = expectation_dm(&sm, &rho_t).unwrap();
        let flat = two_time_oracle(&driven, &rho0, t, &taus, &id, &sm, &cfg).unwrap();
        for cv in &flat {
            assert!((cv - b_mean).norm() < 1e-9);
        }
        let at_zero = two_time_oracle(&driven, &rho0, t, &[0.0], &sp, &sm, &cfg).unwrap();
        let ab = expectation_dm(&sp.matmul(&sm).unwrap(), &rho_t).unwrap();
        assert!((at_zero[0] - ab).norm() < 1e-12);
    }

    #[test]
    fn trace_distance_examples() {
        let e = diag_rho(1.0);
        let g = diag_rho(0.0);
        assert!(trace_distance(&e, &e).unwrap().abs() < 1e-15);
        assert!((trace_distance(&e, &g).unwrap() - 1.0).abs() < 1e-14);
        let rho = random_hermitian_trace_one(9);
        let eps = 0.1;
        let mixed = &rho * c(1.0 - eps, 0.0) + DMatrix::<C64>::identity(2, 2) * c(eps / 2.0, 0.0);
        let d = trace_distance(&rho, &mixed).unwrap();
        assert!(d <= eps + 1e-14);
        assert!((d - trace_distance(&mixed, &rho).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn invariant_violations_are_reported() {
        let mut bad = diag_rho(0.5);
        bad[(0, 0)] = c(1.5, 0.0);
        bad[(1, 1)] = c(-0.5, 0.0);
        assert!(matches!(check_density_matrix(&bad), Err(Error::InvariantViolation(_))));
    }
}
