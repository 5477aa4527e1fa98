//! Ready-made models: the driven two-level atom, dissipative Bose-Hubbard
//! chains (dephasing, one-, two- and three-body loss) and the closed-form
//! reference quantities that go with them.
//!
//! The two-level basis is ordered `{e, g}`. Lattice sites are 0-based.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::basis::{enumerate_basis, site_lowering, OccupationBasis, SectorFamily};
use crate::error::{Error, Result};
use crate::linalg::{lowest_eigenpair, LinearOperator, StateVector, C64};
use crate::model::{Jump, JumpBlock, LindbladModel, Observable, SectorBlock};
use crate::trajectory::TrajectoryState;

/// Validity threshold on `γ₃ / J` for the projected three-body loss rate.
pub const ZENO_RATIO_MIN: f64 = 50.0;

/// Index of `|e⟩` in the two-level basis.
pub const EXCITED: usize = 0;
/// Index of `|g⟩` in the two-level basis.
pub const GROUND: usize = 1;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::InvalidModel(format!("{name} must be finite and >= 0, got {value}")));
    }
    Ok(())
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidModel(format!("{name} must be finite, got {value}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelParams {
    pub omega: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl TwoLevelParams {
    pub fn new(omega: f64, delta: f64, gamma: f64) -> Self {
        Self { omega, delta, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("omega", self.omega)?;
        check_finite("delta", self.delta)?;
        check_rate("gamma", self.gamma)
    }
}

/// `H = −(Ω/2)σ_x − Δσ⁺σ⁻` with the single jump `√Γ σ⁻`.
pub fn two_level(p: &TwoLevelParams) -> Result<LindbladModel> {
    p.validate()?;
    let h = LinearOperator::from_dense(
        2,
        2,
        &[c(-p.delta, 0.0), c(-p.omega / 2.0, 0.0), c(-p.omega / 2.0, 0.0), c(0.0, 0.0)],
    )?;
    let jump = Jump::with_rate("emission", &sigma_minus(), p.gamma)?;
    LindbladModel::new("two_level", h, vec![jump])
}

/// `σ⁻ = |g⟩⟨e|`.
pub fn sigma_minus() -> LinearOperator {
    LinearOperator::from_triplets(2, 2, [(GROUND, EXCITED, c(1.0, 0.0))]).expect("valid triplet")
}

/// Observables of the two-level model: `P_e`, `P_g`, `sigma_x`, `sigma_y`,
/// `sigma_z`, `sigma_plus`, `sigma_minus`.
pub fn two_level_observable(name: &str) -> Result<Observable> {
    let sm = sigma_minus();
    let op = match name {
        "P_e" => LinearOperator::real_diagonal(&[1.0, 0.0]),
        "P_g" => LinearOperator::real_diagonal(&[0.0, 1.0]),
        "sigma_z" => LinearOperator::real_diagonal(&[1.0, -1.0]),
        "sigma_x" => sm.add(&sm.adjoint())?.with_hermitian_hint()?,
        "sigma_y" => sm.scale(c(0.0, 1.0)).add(&sm.adjoint().scale(c(0.0, -1.0)))?.with_hermitian_hint()?,
        "sigma_plus" => sm.adjoint(),
        "sigma_minus" => sm,
        other => return Err(Error::InvalidArgument(format!("unknown two-level observable '{other}'"))),
    };
    Ok(Observable::single(name, op))
}

/// `|e⟩` or `|g⟩` as a trajectory start.
pub fn two_level_state(index: usize) -> Result<TrajectoryState> {
    Ok(TrajectoryState::new(StateVector::basis(2, index)?, 0))
}

/// The generator acting on `(ρ_eg, ρ_ge, ρ_ee, ρ_gg)`.
pub fn optical_bloch_generator(p: &TwoLevelParams) -> Matrix4<C64> {
    let (o, d, g) = (p.omega / 2.0, p.delta, p.gamma);
    Matrix4::new(
        c(-g / 2.0, d), c(0.0, 0.0), c(0.0, -o), c(0.0, o),
        c(0.0, 0.0), c(-g / 2.0, -d), c(0.0, o), c(0.0, -o),
        c(0.0, -o), c(0.0, o), c(-g, 0.0), c(0.0, 0.0),
        c(0.0, o), c(0.0, -o), c(g, 0.0), c(0.0, 0.0),
    )
}

/// Stationary excited population `(Ω²/4) / (Δ² + Γ²/4 + Ω²/2)`.
pub fn optical_bloch_steady_excited(p: &TwoLevelParams) -> f64 {
    let o2 = p.omega * p.omega;
    let denom = p.delta * p.delta + p.gamma * p.gamma / 4.0 + o2 / 2.0;
    if denom == 0.0 {
        return 0.0;
    }
    o2 / 4.0 / denom
}

/// Effective photon scattering rate `Ω²Γ / (4Δ² + Γ²)`.
pub fn zeno_rate(omega: f64, delta: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok(omega * omega * gamma / (4.0 * delta * delta + gamma * gamma))
}

/// Loss scale `6J²/γ₃` of the projected three-body model. Logs a warning
/// when `γ₃ / J` is below [`ZENO_RATIO_MIN`].
pub fn zeno_effective_loss_check(j: f64, gamma3: f64) -> Result<f64> {
    if !(gamma3 > 0.0) || !gamma3.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma3 must be positive, got {gamma3}")));
    }
    check_finite("J", j)?;
    if !zeno_regime_valid(j, gamma3) {
        log::warn!("gamma3/J = {} is below {ZENO_RATIO_MIN}; the projected loss rate is unreliable", gamma3 / j.abs());
    }
    Ok(6.0 * j * j / gamma3)
}

pub fn zeno_regime_valid(j: f64, gamma3: f64) -> bool {
    j == 0.0 || gamma3 / j.abs() >= ZENO_RATIO_MIN
}

const SMALL_Z: f64 = 0.1;

/// `sin z / z` and `(z cos z − sin z) / z³`, by series near zero.
fn bessel_parts(z: f64) -> (f64, f64) {
    if z.abs() < SMALL_Z {
        let z2 = z * z;
        let sinc = 1.0 - z2 / 6.0 * (1.0 - z2 / 20.0 * (1.0 - z2 / 42.0));
        let rest = -1.0 / 3.0 + z2 * (1.0 / 30.0 - z2 * (1.0 / 840.0 - z2 / 45360.0));
        (sinc, rest)
    } else {
        let (s, co) = z.sin_cos();
        (s / z, (z * co - s) / (z * z * z))
    }
}

/// `F(z, c) = (3/2){ sin z/z (1 − c²) + (1 − 3c²)(cos z/z² − sin z/z³) }`
/// with `c = d̂·ẑ`. Continuous at `z = 0`, where it equals 1.
pub fn radiation_kernel_f(z: f64, cos_angle: f64) -> f64 {
    let c2 = cos_angle * cos_angle;
    let (sinc, rest) = bessel_parts(z);
    1.5 * (sinc * (1.0 - c2) + (1.0 - 3.0 * c2) * rest)
}

/// `G(z, c) = (3/4){ (c² − 1) cos z/z + (1 − 3c²)(sin z/z² + cos z/z³) }`.
/// Singular at `z = 0`, where NaN is returned.
pub fn radiation_kernel_g(z: f64, cos_angle: f64) -> f64 {
    if z == 0.0 {
        return f64::NAN;
    }
    let c2 = cos_angle * cos_angle;
    let (s, co) = z.sin_cos();
    0.75 * ((c2 - 1.0) * co / z + (1.0 - 3.0 * c2) * (s / (z * z) + co / (z * z * z)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// On-site dissipation channels. Rates enter as `c = √rate · op`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dissipator {
    #[default]
    None,
    /// Jumps `√γ n_l`.
    Dephasing { gamma: f64 },
    /// Jumps `√Γ_l a_l`, one rate per site.
    OneBodyLoss { rates: Vec<f64> },
    /// Jumps `√Γ₀ a_l²`.
    TwoBodyLoss { gamma0: f64 },
    /// Jumps `√(γ₃/6) a_l³`.
    ThreeBodyLoss { gamma3: f64 },
}

impl Dissipator {
    /// Bosons removed per jump, 0 for number-conserving channels.
    pub fn arity(&self) -> usize {
        match self {
            Self::None | Self::Dephasing { .. } => 0,
            Self::OneBodyLoss { .. } => 1,
            Self::TwoBodyLoss { .. } => 2,
            Self::ThreeBodyLoss { .. } => 3,
        }
    }

    fn site_rate(&self, l: usize) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Dephasing { gamma } => *gamma,
            Self::OneBodyLoss { rates } => rates[l],
            Self::TwoBodyLoss { gamma0 } => *gamma0,
            Self::ThreeBodyLoss { gamma3 } => gamma3 / 6.0,
        }
    }

    fn label(&self, l: usize) -> String {
        match self {
            Self::None => String::new(),
            Self::Dephasing { .. } => format!("dephasing_{l}"),
            Self::OneBodyLoss { .. } => format!("loss1_{l}"),
            Self::TwoBodyLoss { .. } => format!("loss2_{l}"),
            Self::ThreeBodyLoss { .. } => format!("loss3_{l}"),
        }
    }
}

/// `H = −J Σ_⟨ij⟩ (a†_i a_j + h.c.) + (U/2) Σ n_l(n_l − 1) + Σ ε_l n_l`
/// on `sites` sites with `particles` bosons and at most `n_max` per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeModelParams {
    pub sites: usize,
    pub particles: usize,
    pub n_max: usize,
    pub j: f64,
    #[serde(default)]
    pub u: f64,
    /// Per-site offsets `ε_l`; empty means all zero.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub dissipator: Dissipator,
}

impl LatticeModelParams {
    pub fn new(sites: usize, particles: usize, n_max: usize, j: f64, u: f64) -> Self {
        Self {
            sites,
            particles,
            n_max,
            j,
            u,
            offsets: Vec::new(),
            boundary: Boundary::Open,
            dissipator: Dissipator::None,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_dissipator(mut self, dissipator: Dissipator) -> Self {
        self.dissipator = dissipator;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Self {
        self.offsets = offsets;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidModel(format!("a lattice needs at least 2 sites, got {}", self.sites)));
        }
        check_finite("J", self.j)?;
        check_finite("U", self.u)?;
        if !self.offsets.is_empty() && self.offsets.len() != self.sites {
            return Err(Error::InvalidModel(format!(
                "{} offsets given for {} sites",
                self.offsets.len(),
                self.sites
            )));
        }
        for (l, e) in self.offsets.iter().enumerate() {
            check_finite(&format!("offset {l}"), *e)?;
        }
        match &self.dissipator {
            Dissipator::None => {}
            Dissipator::Dephasing { gamma } => check_rate("gamma", *gamma)?,
            Dissipator::OneBodyLoss { rates } => {
                if rates.len() != self.sites {
                    return Err(Error::InvalidModel(format!(
                        "{} loss rates given for {} sites",
                        rates.len(),
                        self.sites
                    )));
                }
                for r in rates {
                    check_rate("loss rate", *r)?;
                }
            }
            Dissipator::TwoBodyLoss { gamma0 } => check_rate("gamma0", *gamma0)?,
            Dissipator::ThreeBodyLoss { gamma3 } => check_rate("gamma3", *gamma3)?,
        }
        Ok(())
    }

    /// Nearest-neighbour bonds. A periodic pair of sites has a single bond.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut bonds: Vec<_> = (0..self.sites.saturating_sub(1)).map(|l| (l, l + 1)).collect();
        if self.boundary == Boundary::Periodic && self.sites > 2 {
            bonds.push((self.sites - 1, 0));
        }
        bonds
    }

    fn offset(&self, l: usize) -> f64 {
        self.offsets.get(l).copied().unwrap_or(0.0)
    }
}

/// A lattice model together with the bases of its sectors. Sector 0 holds
/// the initial particle number.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    pub params: LatticeModelParams,
    pub family: SectorFamily,
    pub model: LindbladModel,
}

/// Dissipative Bose-Hubbard chain. Loss dissipators produce one sector per
/// reachable particle number.
pub fn bose_hubbard(p: &LatticeModelParams) -> Result<LatticeModel> {
    p.validate()?;
    let arity = p.dissipator.arity();
    let family = if arity == 0 {
        SectorFamily::single(enumerate_basis(p.sites, p.n_max, Some(p.particles))?)
    } else {
        SectorFamily::new(p.sites, p.n_max, p.particles, arity)?
    };
    let has_jumps = p.dissipator != Dissipator::None;
    let labels: Vec<String> = if has_jumps { (0..p.sites).map(|l| p.dissipator.label(l)).collect() } else { Vec::new() };

    let mut sectors = Vec::with_capacity(family.len());
    for (s, basis) in family.bases().iter().enumerate() {
        let hamiltonian = hamiltonian(p, basis)?;
        let mut jumps = Vec::with_capacity(labels.len());
        for l in 0..labels.len() {
            let amp = p.dissipator.site_rate(l).sqrt();
            let block = match (&p.dissipator, family.next(s)) {
                (Dissipator::Dephasing { .. }, _) => {
                    Some(JumpBlock { target: s, op: basis.site_number(l)?.scale_real(amp) })
                }
                (_, Some(t)) => {
                    let op = site_lowering(basis, &family.bases()[t], l, arity)?.scale_real(amp);
                    Some(JumpBlock { target: t, op })
                }
                (_, None) => None,
            };
            jumps.push(block);
        }
        sectors.push(SectorBlock { particles: basis.sector(), hamiltonian, jumps });
    }
    let name = match p.dissipator {
        Dissipator::None => "bose_hubbard",
        Dissipator::Dephasing { .. } => "bose_hubbard_dephasing",
        Dissipator::OneBodyLoss { .. } => "bose_hubbard_one_body_loss",
        Dissipator::TwoBodyLoss { .. } => "bose_hubbard_two_body_loss",
        Dissipator::ThreeBodyLoss { .. } => "bose_hubbard_three_body_loss",
    };
    let model = LindbladModel::with_sectors(name, labels, sectors)?;
    Ok(LatticeModel { params: p.clone(), family, model })
}

/// Hard-core bosons (`n_max = 1`) with dephasing at rate `gamma`.
pub fn hardcore_chain(sites: usize, particles: usize, j: f64, gamma: f64, boundary: Boundary) -> Result<LatticeModel> {
    let p = LatticeModelParams::new(sites, particles, 1, j, 0.0)
        .with_boundary(boundary)
        .with_dissipator(Dissipator::Dephasing { gamma });
    let mut m = bose_hubbard(&p)?;
    m.model = rename(m.model, "hardcore_chain");
    Ok(m)
}

fn rename(model: LindbladModel, name: &str) -> LindbladModel {
    let labels = model.labels().to_vec();
    let sectors = model.sectors().to_vec();
    LindbladModel::assemble(name, labels, sectors)
}

fn kinetic(p: &LatticeModelParams, basis: &OccupationBasis) -> Result<LinearOperator> {
    let d = basis.dim();
    let mut k = LinearOperator::zeros(d, d);
    for (a, b) in p.bonds() {
        k = k.add(&basis.hop_symmetric(a, b)?)?;
    }
    k.scale_real(-p.j).with_hermitian_hint()
}

fn hamiltonian(p: &LatticeModelParams, basis: &OccupationBasis) -> Result<LinearOperator> {
    let onsite = basis.diagonal_operator(|s| {
        s.iter()
            .enumerate()
            .map(|(l, &n)| {
                let n = n as f64;
                0.5 * p.u * n * (n - 1.0) + p.offset(l) * n
            })
            .sum()
    });
    kinetic(p, basis)?.add(&onsite)?.with_hermitian_hint()
}

impl LatticeModel {
    pub fn bases(&self) -> &[OccupationBasis] {
        self.family.bases()
    }

    /// Trajectory start in the number state `occupation` (sector 0).
    pub fn initial_state(&self, occupation: &[usize]) -> Result<TrajectoryState> {
        let psi = self.bases()[0].basis_state(occupation)?;
        Ok(TrajectoryState::new(psi, 0))
    }

    /// Ground state of the Hamiltonian in sector 0, with its energy.
    pub fn ground_state(&self) -> Result<(f64, TrajectoryState)> {
        let (e, psi) = lowest_eigenpair(&self.model.sector(0).hamiltonian)?;
        Ok((e, TrajectoryState::new(psi, 0)))
    }

    fn per_sector<F>(&self, name: impl Into<String>, f: F) -> Result<Observable>
    where
        F: Fn(&OccupationBasis) -> Result<LinearOperator>,
    {
        let blocks = self.bases().iter().map(&f).collect::<Result<Vec<_>>>()?;
        Ok(Observable::new(name, blocks))
    }

    pub fn number(&self, l: usize) -> Result<Observable> {
        self.per_sector(format!("n_{l}"), |b| b.site_number(l))
    }

    pub fn total_number(&self) -> Result<Observable> {
        self.per_sector("N", |b| Ok(b.total_number()))
    }

    /// `a†_l a_j + a†_j a_l`.
    pub fn hop_symmetric(&self, l: usize, j: usize) -> Result<Observable> {
        self.per_sector(format!("hop_{l}_{j}"), |b| b.hop_symmetric(l, j))
    }

    /// `n_l n_j`.
    pub fn density_density(&self, l: usize, j: usize) -> Result<Observable> {
        if l >= self.params.sites || j >= self.params.sites {
            return Err(Error::IndexOutOfRange { index: l.max(j), len: self.params.sites });
        }
        self.per_sector(format!("nn_{l}_{j}"), |b| Ok(b.diagonal_operator(|s| s[l] as f64 * s[j] as f64)))
    }

    /// The tunnelling part `−J Σ_⟨ij⟩ (a†_i a_j + h.c.)`.
    pub fn kinetic(&self) -> Result<Observable> {
        self.per_sector("kinetic", |b| kinetic(&self.params, b))
    }

    /// The full Hamiltonian.
    pub fn energy(&self) -> Result<Observable> {
        self.per_sector("energy", |b| hamiltonian(&self.params, b))
    }

    /// Parse `N`, `n_<l>`, `kinetic`, `energy`, `hop_<l>_<j>`, `nn_<l>_<j>`.
    pub fn observable_by_name(&self, name: &str) -> Result<Observable> {
        let unknown = || Error::InvalidArgument(format!("unknown lattice observable '{name}'"));
        let index = |s: &str| s.parse::<usize>().map_err(|_| unknown());
        let pair = |s: &str| -> Result<(usize, usize)> {
            let (a, b) = s.split_once('_').ok_or_else(unknown)?;
            Ok((index(a)?, index(b)?))
        };
        match name {
            "N" => self.total_number(),
            "kinetic" => self.kinetic(),
            "energy" => self.energy(),
            _ => {
                if let Some(rest) = name.strip_prefix("hop_") {
                    let (l, j) = pair(rest)?;
                    self.hop_symmetric(l, j)
                } else if let Some(rest) = name.strip_prefix("nn_") {
                    let (l, j) = pair(rest)?;
                    self.density_density(l, j)
                } else if let Some(rest) = name.strip_prefix("n_") {
                    self.number(index(rest)?)
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expectation;
    use crate::oracle::lindblad_rhs;

    fn fig3() -> TwoLevelParams {
        TwoLevelParams::new(1.0, 0.0, 1.0 / 6.0)
    }

    #[test]
    fn steady_state_value() {
        assert!((optical_bloch_steady_excited(&fig3()) - 0.49315).abs() < 1e-5);
        assert_eq!(optical_bloch_steady_excited(&TwoLevelParams::new(0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn generator_structure() {
        let p = TwoLevelParams::new(0.7, 0.3, 0.2);
        let m = optical_bloch_generator(&p);
        assert_eq!(m[(2, 2)], c(-0.2, 0.0));
        for col in 0..4 {
            assert!((m[(2, col)] + m[(3, col)]).norm() < 1e-15);
        }
    }

    #[test]
    fn generator_matches_lindblad_rhs() {
        let p = TwoLevelParams::new(0.9, -0.4, 0.35);
        let model = two_level(&p).unwrap();
        let gen = optical_bloch_generator(&p);
        let rho = nalgebra::DMatrix::from_row_slice(2, 2, &[c(0.3, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.7, 0.0)]);
        let drho = lindblad_rhs(&model, &rho).unwrap();
        let v = nalgebra::Vector4::new(rho[(0, 1)], rho[(1, 0)], rho[(0, 0)], rho[(1, 1)]);
        let w = gen * v;
        let expected = [drho[(0, 1)], drho[(1, 0)], drho[(0, 0)], drho[(1, 1)]];
        for k in 0..4 {
            assert!((w[k] - expected[k]).norm() < 1e-12, "component {k}");
        }
    }

    #[test]
    fn two_level_observables() {
        let e = two_level_state(EXCITED).unwrap().psi;
        let pe = two_level_observable("P_e").unwrap();
        assert_eq!(expectation(&pe.blocks[0], &e).unwrap(), c(1.0, 0.0));
        let sz = two_level_observable("sigma_z").unwrap();
        assert_eq!(expectation(&sz.blocks[0], &e).unwrap(), c(1.0, 0.0));
        assert!(two_level_observable("bogus").is_err());
        assert!(two_level(&TwoLevelParams::new(1.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn zeno_rate_values() {
        assert!((zeno_rate(2.0, 0.0, 10.0).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(zeno_rate(0.0, 1.0, 1.0).unwrap(), 0.0);
        let rates: Vec<f64> = [10.0, 20.0, 40.0].iter().map(|&g| zeno_rate(1.0, 1.0, g).unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(zeno_rate(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn projected_loss_scale() {
        assert!((zeno_effective_loss_check(1.0, 250.0).unwrap() - 0.024).abs() < 1e-15);
        assert_eq!(zeno_effective_loss_check(0.0, 10.0).unwrap(), 0.0);
        let a = zeno_effective_loss_check(1.0, 100.0).unwrap();
        let b = zeno_effective_loss_check(1.0, 200.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
        assert!(!zeno_regime_valid(1.0, 10.0));
        assert!(zeno_regime_valid(1.0, 250.0));
    }

    #[test]
    fn kernel_values() {
        for cos in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            assert!((radiation_kernel_f(0.0, cos) - 1.0).abs() < 1e-15);
            let below = radiation_kernel_f(SMALL_Z * (1.0 - 1e-12), cos);
            let above = radiation_kernel_f(SMALL_Z * (1.0 + 1e-12), cos);
            assert!((below - above).abs() < 1e-12);
        }
        let pi = std::f64::consts::PI;
        assert!((radiation_kernel_f(pi, 0.0) + 1.5 / (pi * pi)).abs() < 1e-14);
        assert!((radiation_kernel_g(pi, 0.0) - 0.75 * (1.0 / pi - 1.0 / pi.powi(3))).abs() < 1e-14);
        assert!(radiation_kernel_g(0.0, 0.0).is_nan());
    }

    #[test]
    fn bonds_by_boundary() {
        let open = LatticeModelParams::new(4, 2, 1, 1.0, 0.0);
        assert_eq!(open.bonds(), vec![(0, 1), (1, 2), (2, 3)]);
        let ring = open.clone().with_boundary(Boundary::Periodic);
        assert_eq!(ring.bonds().len(), 4);
        let pair = LatticeModelParams::new(2, 1, 1, 1.0, 0.0).with_boundary(Boundary::Periodic);
        assert_eq!(pair.bonds(), vec![(0, 1)]);
        assert!(LatticeModelParams::new(1, 1, 1, 1.0, 0.0).validate().is_err());
        assert!(open.clone().with_offsets(vec![0.0; 3]).validate().is_err());
    }

    #[test]
    fn hardcore_ground_state_energy() {
        let m = hardcore_chain(10, 5, 1.0, 0.1, Boundary::Periodic).unwrap();
        assert_eq!(m.model.dim(), 252);
        let (e0, _) = m.ground_state().unwrap();
        // odd N maps to free fermions with periodic momenta 2πm/L, m = -2..=2
        let e_free: f64 = [-2.0, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .map(|k: &f64| -2.0 * (2.0 * std::f64::consts::PI * k / 10.0).cos())
            .sum::<f64>();
        assert!((e0 - e_free).abs() < 1e-9, "{e0} vs {e_free}");
    }

    #[test]
    fn dephasing_jumps_are_number_operators() {
        let m = hardcore_chain(4, 2, 1.0, 0.25, Boundary::Open).unwrap();
        assert_eq!(m.model.n_sectors(), 1);
        assert_eq!(m.model.labels()[2], "dephasing_2");
        let block = m.model.sector(0).jumps[2].as_ref().unwrap();
        let n2 = m.bases()[0].site_number(2).unwrap().scale_real(0.5);
        assert_eq!(block.op, n2);
    }

    #[test]
    fn loss_sectors_and_weights() {
        let p = LatticeModelParams::new(2, 3, 3, 0.0, 0.0).with_dissipator(Dissipator::ThreeBodyLoss { gamma3: 1.2 });
        let m = bose_hubbard(&p).unwrap();
        assert_eq!(m.model.sector_dims(), vec![4, 1]);
        let psi = m.initial_state(&[3, 0]).unwrap().psi;
        let c0 = m.model.sector(0).jumps[0].as_ref().unwrap();
        let w = c0.op.apply(&psi).unwrap().norm_sqr();
        assert!((w - 1.2).abs() < 1e-14);
        assert!(m.model.sector(1).jumps[0].is_none());

        let p = LatticeModelParams::new(2, 2, 2, 0.0, 0.0).with_dissipator(Dissipator::TwoBodyLoss { gamma0: 0.5 });
        let m = bose_hubbard(&p).unwrap();
        let psi = m.initial_state(&[2, 0]).unwrap().psi;
        let w = m.model.sector(0).jumps[0].as_ref().unwrap().op.apply(&psi).unwrap().norm_sqr();
        assert!((w - 1.0).abs() < 1e-14);

        let p = LatticeModelParams::new(3, 2, 2, 1.0, 0.0)
            .with_dissipator(Dissipator::OneBodyLoss { rates: vec![0.1, 0.2, 0.3] });
        let m = bose_hubbard(&p).unwrap();
        assert_eq!(m.model.sector_dims(), vec![6, 3, 1]);
        assert_eq!(m.model.sector(1).particles, Some(1));
    }

    #[test]
    fn observables_by_name() {
        let p = LatticeModelParams::new(3, 3, 2, 1.0, 2.0).with_dissipator(Dissipator::Dephasing { gamma: 0.1 });
        let m = bose_hubbard(&p).unwrap();
        let psi = m.initial_state(&[1, 1, 1]).unwrap().psi;
        let ev = |name: &str| expectation(&m.observable_by_name(name).unwrap().blocks[0], &psi).unwrap().re;
        assert_eq!(ev("N"), 3.0);
        assert_eq!(ev("n_1"), 1.0);
        assert_eq!(ev("nn_0_2"), 1.0);
        assert_eq!(ev("kinetic"), 0.0);
        assert_eq!(ev("energy"), 0.0);
        assert_eq!(ev("hop_0_1"), 0.0);
        let psi2 = m.initial_state(&[2, 1, 0]).unwrap().psi;
        assert_eq!(expectation(&m.energy().unwrap().blocks[0], &psi2).unwrap().re, 2.0);
        for bad in ["n_7", "hop_1", "foo", "nn_a_b"] {
            assert!(m.observable_by_name(bad).is_err(), "{bad}");
        }
    }
}
