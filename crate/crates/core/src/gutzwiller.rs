//! Quantum trajectories restricted to Gutzwiller product states
//! `Π_l Σ_n f_n^(l) |n⟩_l`.
//!
//! Each step makes one global first-order jump decision. Without a jump,
//! every site is propagated exactly over the step under its mean-field
//! Hamiltonian `−J(ψ_l a† + ψ_l* a) + (U/2) n(n − 1) + ε_l n` plus the
//! non-Hermitian part of its on-site jumps, with `ψ_l = Σ_{j ∈ nn(l)} ⟨a_j⟩`
//! frozen at the start of the step. On-site jumps keep the product form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::Boundary;
use crate::error::{Error, Result};
use crate::linalg::{dense_expm, C64};
use crate::rng::RngStream;
use crate::stats::{EnsembleAccumulator, EnsembleResult, RunMetadata};
use crate::trajectory::{check_times, run_blocks, BlockOutcome, JumpEvent, DELTA_P_WARN, NORM_TOL};

const ZERO: C64 = C64::new(0.0, 0.0);

/// On-site channels supported by the product-state backend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GwDissipator {
    #[default]
    None,
    /// Jumps `√γ n_l`.
    Dephasing { gamma: f64 },
    /// Jumps `√Γ_l a_l`, one rate per site.
    OneBodyLoss { rates: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GutzwillerParams {
    pub sites: usize,
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
    pub dissipator: GwDissipator,
}

impl GutzwillerParams {
    pub fn new(sites: usize, n_max: usize, j: f64, u: f64) -> Self {
        Self {
            sites,
            n_max,
            j,
            u,
            offsets: Vec::new(),
            boundary: Boundary::Open,
            dissipator: GwDissipator::None,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_dissipator(mut self, dissipator: GwDissipator) -> Self {
        self.dissipator = dissipator;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Self {
        self.offsets = offsets;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 || self.n_max == 0 {
            return Err(Error::InvalidModel("sites and n_max must be at least 1".into()));
        }
        if !self.j.is_finite() || !self.u.is_finite() {
            return Err(Error::InvalidModel("J and U must be finite".into()));
        }
        if !self.offsets.is_empty() && self.offsets.len() != self.sites {
            return Err(Error::InvalidModel(format!(
                "{} offsets given for {} sites",
                self.offsets.len(),
                self.sites
            )));
        }
        if self.offsets.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidModel("offsets must be finite".into()));
        }
        let bad_rate = |r: f64| !(r >= 0.0) || !r.is_finite();
        match &self.dissipator {
            GwDissipator::None => {}
            GwDissipator::Dephasing { gamma } => {
                if bad_rate(*gamma) {
                    return Err(Error::InvalidModel(format!("gamma must be finite and >= 0, got {gamma}")));
                }
            }
            GwDissipator::OneBodyLoss { rates } => {
                if rates.len() != self.sites {
                    return Err(Error::InvalidModel(format!(
                        "{} loss rates given for {} sites",
                        rates.len(),
                        self.sites
                    )));
                }
                if rates.iter().any(|&r| bad_rate(r)) {
                    return Err(Error::InvalidModel("loss rates must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Neighbours of every site. A periodic pair of sites has a single bond.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nn = vec![Vec::new(); self.sites];
        for l in 0..self.sites.saturating_sub(1) {
            nn[l].push(l + 1);
            nn[l + 1].push(l);
        }
        if self.boundary == Boundary::Periodic && self.sites > 2 {
            nn[self.sites - 1].push(0);
            nn[0].push(self.sites - 1);
        }
        nn
    }

    fn rate(&self, l: usize) -> f64 {
        match &self.dissipator {
            GwDissipator::None => 0.0,
            GwDissipator::Dephasing { gamma } => *gamma,
            GwDissipator::OneBodyLoss { rates } => rates[l],
        }
    }

    fn label(&self, l: usize) -> String {
        match self.dissipator {
            GwDissipator::None => String::new(),
            GwDissipator::Dephasing { .. } => format!("dephasing_{l}"),
            GwDissipator::OneBodyLoss { .. } => format!("loss1_{l}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GutzwillerState {
    /// `coeffs[l][n] = f_n^(l)`.
    pub coeffs: Vec<Vec<C64>>,
    pub t: f64,
    pub jump_log: Vec<JumpEvent>,
}

impl GutzwillerState {
    /// Per-site coefficient vectors, each normalized within 1e-9.
    pub fn new(coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let state = Self { coeffs, t: 0.0, jump_log: Vec::new() };
        state.check_normalized()?;
        Ok(state)
    }

    /// The number state `|n_0, n_1, ...⟩`.
    pub fn number_state(occupation: &[usize], n_max: usize) -> Result<Self> {
        let coeffs = occupation
            .iter()
            .map(|&n| {
                if n > n_max {
                    return Err(Error::InvalidArgument(format!("occupation {n} exceeds n_max = {n_max}")));
                }
                let mut f = vec![ZERO; n_max + 1];
                f[n] = C64::new(1.0, 0.0);
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(coeffs)
    }

    /// The same local state on every site.
    pub fn uniform(sites: usize, local: &[C64]) -> Result<Self> {
        Self::new(vec![local.to_vec(); sites])
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn sites(&self) -> usize {
        self.coeffs.len()
    }

    pub fn check_normalized(&self) -> Result<()> {
        for f in &self.coeffs {
            let n2 = norm_sqr(f);
            if (n2 - 1.0).abs() > NORM_TOL {
                return Err(Error::NotNormalized { norm: n2.sqrt() });
            }
        }
        Ok(())
    }

    fn check_shape(&self, p: &GutzwillerParams) -> Result<()> {
        if self.coeffs.len() != p.sites {
            return Err(Error::DimensionMismatch { expected: p.sites, found: self.coeffs.len() });
        }
        for f in &self.coeffs {
            if f.len() != p.n_max + 1 {
                return Err(Error::DimensionMismatch { expected: p.n_max + 1, found: f.len() });
            }
        }
        Ok(())
    }

    /// `⟨a_l⟩ = Σ_n √(n+1) conj(f_n) f_{n+1}`.
    pub fn annihilation(&self, l: usize) -> C64 {
        let f = &self.coeffs[l];
        (0..f.len().saturating_sub(1)).map(|n| ((n + 1) as f64).sqrt() * f[n].conj() * f[n + 1]).sum()
    }

    /// `⟨(n_l)^k⟩`.
    pub fn number_moment(&self, l: usize, k: i32) -> f64 {
        self.coeffs[l].iter().enumerate().map(|(n, a)| (n as f64).powi(k) * a.norm_sqr()).sum()
    }

    /// `⟨n_l⟩`.
    pub fn density(&self, l: usize) -> f64 {
        self.number_moment(l, 1)
    }

    /// Single-site density matrix element `f_row conj(f_col)`.
    pub fn site_element(&self, l: usize, row: usize, col: usize) -> C64 {
        self.coeffs[l][row] * self.coeffs[l][col].conj()
    }
}

fn norm_sqr(f: &[C64]) -> f64 {
    f.iter().map(|a| a.norm_sqr()).sum()
}

fn normalize(f: &mut [C64]) -> Result<()> {
    let n = norm_sqr(f).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    for a in f.iter_mut() {
        *a /= n;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFields {
    pub psi: Vec<C64>,
}

/// `ψ_l = Σ_{j ∈ nn(l)} ⟨a_j⟩`.
pub fn mean_fields(state: &GutzwillerState, params: &GutzwillerParams) -> Result<MeanFields> {
    state.check_shape(params)?;
    let a: Vec<C64> = (0..state.sites()).map(|l| state.annihilation(l)).collect();
    let psi = params.neighbours().iter().map(|nn| nn.iter().map(|&j| a[j]).sum()).collect();
    Ok(MeanFields { psi })
}

/// Jump weight `⟨c̃†c̃⟩` of the on-site operator on site `l`, before the rate.
fn local_weight(params: &GutzwillerParams, state: &GutzwillerState, l: usize) -> f64 {
    match params.dissipator {
        GwDissipator::None => 0.0,
        GwDissipator::Dephasing { .. } => state.number_moment(l, 2),
        GwDissipator::OneBodyLoss { .. } => state.number_moment(l, 1),
    }
}

/// One first-order step of length `dt`. Draws `r1` always and `r2` only when
/// a jump occurs. Returns the total jump probability of the step.
pub fn gw_step(state: &mut GutzwillerState, params: &GutzwillerParams, dt: f64, rng: &mut RngStream) -> Result<f64> {
    let r1 = rng.uniform();
    gw_step_lazy(state, params, dt, r1, || rng.uniform())
}

/// [`gw_step`] with explicit random numbers.
pub fn gw_step_with_draws(
    state: &mut GutzwillerState,
    params: &GutzwillerParams,
    dt: f64,
    r1: f64,
    r2: f64,
) -> Result<f64> {
    gw_step_lazy(state, params, dt, r1, || r2)
}

fn gw_step_lazy<F: FnOnce() -> f64>(
    state: &mut GutzwillerState,
    params: &GutzwillerParams,
    dt: f64,
    r1: f64,
    r2: F,
) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let fields = mean_fields(state, params)?;
    let weights: Vec<f64> = (0..params.sites).map(|l| dt * params.rate(l) * local_weight(params, state, l)).collect();
    let total: f64 = weights.iter().sum();
    state.t += dt;

    if r1 < total {
        let target = r2() * total;
        let mut acc = 0.0;
        let mut site = None;
        for (l, w) in weights.iter().enumerate() {
            acc += w;
            if *w > 0.0 && target < acc {
                site = Some(l);
                break;
            }
        }
        let site = site.or_else(|| weights.iter().rposition(|w| *w > 0.0)).ok_or(Error::NoJumpPossible)?;
        apply_local_jump(params, &mut state.coeffs[site])
            .map_err(|_| Error::InconsistentJump { channel: site })?;
        state.jump_log.push(JumpEvent { time: state.t, channel: site, label: params.label(site) });
        return Ok(total);
    }

    let mut next = vec![ZERO; params.n_max + 1];
    for l in 0..params.sites {
        let f = &mut state.coeffs[l];
        local_propagate(params, l, fields.psi[l], dt, f, &mut next)?;
        f.copy_from_slice(&next);
        normalize(f)?;
    }
    Ok(total)
}

/// `next = exp(−i h dt) f` for the local non-Hermitian mean-field Hamiltonian.
fn local_propagate(params: &GutzwillerParams, l: usize, psi: C64, dt: f64, f: &[C64], next: &mut [C64]) -> Result<()> {
    let eps = params.offsets.get(l).copied().unwrap_or(0.0);
    let rate = params.rate(l);
    let d = f.len();
    let mut h = DMatrix::from_element(d, d, ZERO);
    for n in 0..d {
        let nf = n as f64;
        let decay = match params.dissipator {
            GwDissipator::None => 0.0,
            GwDissipator::Dephasing { .. } => nf * nf,
            GwDissipator::OneBodyLoss { .. } => nf,
        };
        h[(n, n)] = C64::new(0.5 * params.u * nf * (nf - 1.0) + eps * nf, -0.5 * rate * decay);
        if n > 0 {
            // ⟨n|a†|n−1⟩ = √n
            h[(n, n - 1)] = -params.j * psi * nf.sqrt();
            h[(n - 1, n)] = -params.j * psi.conj() * nf.sqrt();
        }
    }
    let u = dense_expm(&(h * C64::new(0.0, -1.0)), dt)?;
    let out = u * DVector::from_column_slice(f);
    next.copy_from_slice(out.as_slice());
    Ok(())
}

fn apply_local_jump(params: &GutzwillerParams, f: &mut [C64]) -> Result<()> {
    match params.dissipator {
        GwDissipator::None => return Err(Error::NoJumpPossible),
        GwDissipator::Dephasing { .. } => {
            for (n, a) in f.iter_mut().enumerate() {
                *a *= n as f64;
            }
        }
        GwDissipator::OneBodyLoss { .. } => {
            let top = f.len() - 1;
            for n in 0..top {
                f[n] = ((n + 1) as f64).sqrt() * f[n + 1];
            }
            f[top] = ZERO;
        }
    }
    normalize(f)
}

/// Observables that can be evaluated on a product state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GwObservable {
    /// `n_l`
    Density(usize),
    /// `a_l`
    Annihilation(usize),
    /// `n_l n_j`, factorized for `l ≠ j`
    DensityDensity(usize, usize),
    /// `Σ_l n_l`
    TotalNumber,
    /// `|row⟩⟨col|` element of the site density matrix
    SiteElement { site: usize, row: usize, col: usize },
}

impl GwObservable {
    /// Parse `n_<l>`, `a_<l>`, `nn_<l>_<j>`, `N` or `rho_<l>_<row>_<col>`.
    pub fn parse(name: &str) -> Result<Self> {
        let unknown = || Error::InvalidArgument(format!("unknown Gutzwiller observable '{name}'"));
        let nums = |rest: &str, count: usize| -> Result<Vec<usize>> {
            let v = rest.split('_').map(|s| s.parse::<usize>().map_err(|_| unknown())).collect::<Result<Vec<_>>>()?;
            if v.len() == count {
                Ok(v)
            } else {
                Err(unknown())
            }
        };
        if name == "N" {
            Ok(Self::TotalNumber)
        } else if let Some(rest) = name.strip_prefix("rho_") {
            let v = nums(rest, 3)?;
            Ok(Self::SiteElement { site: v[0], row: v[1], col: v[2] })
        } else if let Some(rest) = name.strip_prefix("nn_") {
            let v = nums(rest, 2)?;
            Ok(Self::DensityDensity(v[0], v[1]))
        } else if let Some(rest) = name.strip_prefix("n_") {
            Ok(Self::Density(nums(rest, 1)?[0]))
        } else if let Some(rest) = name.strip_prefix("a_") {
            Ok(Self::Annihilation(nums(rest, 1)?[0]))
        } else {
            Err(unknown())
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Density(l) => format!("n_{l}"),
            Self::Annihilation(l) => format!("a_{l}"),
            Self::DensityDensity(l, j) => format!("nn_{l}_{j}"),
            Self::TotalNumber => "N".to_string(),
            Self::SiteElement { site, row, col } => format!("rho_{site}_{row}_{col}"),
        }
    }

    fn check(&self, p: &GutzwillerParams) -> Result<()> {
        let site = |l: usize| {
            if l < p.sites {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange { index: l, len: p.sites })
            }
        };
        match *self {
            Self::Density(l) | Self::Annihilation(l) => site(l),
            Self::DensityDensity(l, j) => site(l).and(site(j)),
            Self::TotalNumber => Ok(()),
            Self::SiteElement { site: l, row, col } => {
                site(l)?;
                if row > p.n_max || col > p.n_max {
                    return Err(Error::IndexOutOfRange { index: row.max(col), len: p.n_max + 1 });
                }
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, state: &GutzwillerState) -> C64 {
        match *self {
            Self::Density(l) => C64::new(state.density(l), 0.0),
            Self::Annihilation(l) => state.annihilation(l),
            Self::DensityDensity(l, j) if l == j => C64::new(state.number_moment(l, 2), 0.0),
            Self::DensityDensity(l, j) => C64::new(state.density(l) * state.density(j), 0.0),
            Self::TotalNumber => C64::new((0..state.sites()).map(|l| state.density(l)).sum(), 0.0),
            Self::SiteElement { site, row, col } => state.site_element(site, row, col),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwEnsembleConfig {
    pub n_traj: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub dt: f64,
}

impl GwEnsembleConfig {
    pub fn new(n_traj: usize, base_seed: u64, dt: f64) -> Self {
        Self { n_traj, base_seed, workers: 1, dt }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Step `state` to `t_end` with steps no longer than `dt`, landing exactly.
fn advance(
    state: &mut GutzwillerState,
    params: &GutzwillerParams,
    t_end: f64,
    dt: f64,
    rng: &mut RngStream,
    max_dp: &mut f64,
) -> Result<()> {
    let t_start = state.t;
    if t_end <= t_start {
        return Ok(());
    }
    let n = (((t_end - t_start) / dt) - 1e-9).ceil().max(1.0);
    let h = (t_end - t_start) / n;
    let steps = n as usize;
    for k in 1..=steps {
        let jumps_before = state.jump_log.len();
        let dp = gw_step(state, params, h, rng)?;
        *max_dp = max_dp.max(dp);
        state.t = if k == steps { t_end } else { t_start + k as f64 * h };
        if state.jump_log.len() > jumps_before {
            state.jump_log.last_mut().expect("jump was logged").time = state.t;
        }
    }
    Ok(())
}

/// Evolve one trajectory and record every observable at every report time.
pub fn run_gw_trajectory(
    params: &GutzwillerParams,
    initial: &GutzwillerState,
    report_times: &[f64],
    observables: &[GwObservable],
    dt: f64,
    rng: &mut RngStream,
) -> Result<(Vec<Vec<C64>>, GutzwillerState, f64)> {
    params.validate()?;
    initial.check_shape(params)?;
    initial.check_normalized()?;
    check_times(report_times, initial.t)?;
    for o in observables {
        o.check(params)?;
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut state = initial.clone();
    let mut samples = Vec::with_capacity(report_times.len());
    let mut max_dp = 0.0;
    for &t in report_times {
        advance(&mut state, params, t, dt, rng, &mut max_dp)?;
        samples.push(observables.iter().map(|o| o.evaluate(&state)).collect());
    }
    Ok((samples, state, max_dp))
}

/// Ensemble averages over Gutzwiller trajectories. Trajectory `i` uses
/// `RngStream::new(base_seed, i)`; results do not depend on `workers`.
pub fn run_gw_ensemble(
    params: &GutzwillerParams,
    initial: &GutzwillerState,
    report_times: &[f64],
    observables: &[GwObservable],
    cfg: &GwEnsembleConfig,
) -> Result<EnsembleResult> {
    params.validate()?;
    initial.check_shape(params)?;
    initial.check_normalized()?;
    check_times(report_times, initial.t)?;
    for o in observables {
        o.check(params)?;
    }
    if cfg.n_traj == 0 || cfg.workers == 0 {
        return Err(Error::InvalidArgument("n_traj and workers must be at least 1".into()));
    }
    let n_times = report_times.len();
    let n_obs = observables.len();

    let make_block = |range: std::ops::Range<usize>| {
        let mut acc = EnsembleAccumulator::new(n_times, n_obs);
        let (mut used, mut errors, mut max_dp) = (0, Vec::new(), 0.0f64);
        for i in range {
            let mut rng = RngStream::new(cfg.base_seed, i as u64);
            match run_gw_trajectory(params, initial, report_times, observables, cfg.dt, &mut rng) {
                Ok((samples, _, dp)) => {
                    let flat: Vec<C64> = samples.into_iter().flatten().collect();
                    acc.accumulate_all(&flat).expect("sample shape matches accumulator");
                    used += 1;
                    max_dp = max_dp.max(dp);
                }
                Err(e) => errors.push(format!("trajectory {i}: {e}")),
            }
        }
        let aborted = errors.len();
        BlockOutcome { value: acc, used, aborted, errors, max_delta_p: max_dp }
    };

    let mut total = EnsembleAccumulator::new(n_times, n_obs);
    let (used, aborted, errors, max_dp) = run_blocks(cfg.n_traj, cfg.workers, make_block, |acc| total.merge(&acc))?;
    let mut warnings = Vec::new();
    if aborted > 0 {
        warnings.push(format!("{aborted} of {} trajectories aborted and were excluded", cfg.n_traj));
        warnings.extend(errors.into_iter().take(5));
    }
    if max_dp > DELTA_P_WARN {
        warnings.push(format!("largest jump probability per step was {max_dp:.3}; reduce dt"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let meta = RunMetadata {
        model: "gutzwiller".to_string(),
        scheme: "first_order".to_string(),
        base_seed: cfg.base_seed,
        n_traj_requested: cfg.n_traj,
        n_traj_used: used,
        aborted,
        warnings,
    };
    let names = observables.iter().map(|o| o.name()).collect();
    Ok(EnsembleResult::from_accumulator(report_times.to_vec(), names, &total, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn coherent_like(n_max: usize) -> Vec<C64> {
        let mut f: Vec<C64> = (0..=n_max).map(|n| c(1.0 / (n as f64 + 1.0), 0.1 * n as f64)).collect();
        normalize(&mut f).unwrap();
        f
    }

    #[test]
    fn mott_state_has_no_mean_field() {
        let p = GutzwillerParams::new(4, 2, 1.0, 3.0);
        let s = GutzwillerState::number_state(&[1, 1, 1, 1], 2).unwrap();
        assert!(mean_fields(&s, &p).unwrap().psi.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn uniform_ring_mean_field() {
        let p = GutzwillerParams::new(5, 3, 1.0, 0.0).with_boundary(Boundary::Periodic);
        let s = GutzwillerState::uniform(5, &coherent_like(3)).unwrap();
        let a = s.annihilation(0);
        for psi in mean_fields(&s, &p).unwrap().psi {
            assert!((psi - 2.0 * a).norm() < 1e-15);
        }
        let single = GutzwillerParams::new(1, 3, 1.0, 0.0);
        let s1 = GutzwillerState::uniform(1, &coherent_like(3)).unwrap();
        assert_eq!(mean_fields(&s1, &single).unwrap().psi, vec![ZERO]);
    }

    #[test]
    fn decoupled_sites_keep_populations() {
        let p = GutzwillerParams::new(3, 3, 0.0, 1.3);
        let mut s = GutzwillerState::uniform(3, &coherent_like(3)).unwrap();
        let before: Vec<f64> = s.coeffs[1].iter().map(|a| a.norm()).collect();
        for _ in 0..100 {
            gw_step_with_draws(&mut s, &p, 1e-3, 0.5, 0.5).unwrap();
        }
        let after: Vec<f64> = s.coeffs[1].iter().map(|a| a.norm()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-13);
        }
    }

    #[test]
    fn mott_state_is_frozen_exactly() {
        let p = GutzwillerParams::new(4, 2, 1.0, 2.0)
            .with_boundary(Boundary::Periodic)
            .with_dissipator(GwDissipator::Dephasing { gamma: 0.5 });
        let s0 = GutzwillerState::number_state(&[1, 1, 1, 1], 2).unwrap();
        let obs = [GwObservable::Density(0), GwObservable::Annihilation(2)];
        let mut rng = RngStream::new(3, 0);
        let (samples, fin, _) = run_gw_trajectory(&p, &s0, &[1.0, 2.0, 5.0], &obs, 0.01, &mut rng).unwrap();
        for row in samples {
            assert_eq!(row[0], c(1.0, 0.0));
            assert_eq!(row[1], ZERO);
        }
        assert_eq!(fin.coeffs, s0.coeffs);
        assert!(!fin.jump_log.is_empty());
    }

    #[test]
    fn jumps_update_the_chosen_site() {
        let p = GutzwillerParams::new(2, 2, 0.0, 0.0).with_dissipator(GwDissipator::OneBodyLoss { rates: vec![1.0, 0.0] });
        let mut s = GutzwillerState::number_state(&[2, 1], 2).unwrap();
        gw_step_with_draws(&mut s, &p, 0.1, 0.0, 0.99).unwrap();
        assert_eq!(s.jump_log[0].channel, 0);
        assert_eq!(s.coeffs[0], vec![ZERO, c(1.0, 0.0), ZERO]);
        assert_eq!(s.coeffs[1], vec![ZERO, c(1.0, 0.0), ZERO]);
        s.check_normalized().unwrap();
    }

    #[test]
    fn deterministic_without_dissipation() {
        let p = GutzwillerParams::new(3, 2, 0.3, 1.0);
        let s0 = GutzwillerState::uniform(3, &coherent_like(2)).unwrap();
        let obs = [GwObservable::Density(1), GwObservable::parse("nn_0_2").unwrap()];
        let cfg = GwEnsembleConfig::new(20, 5, 0.01);
        let res = run_gw_ensemble(&p, &s0, &[0.5, 1.0], &obs, &cfg).unwrap();
        for o in 0..2 {
            for t in 0..2 {
                assert_eq!(res.estimates[o][t].stderr_re, Some(0.0));
            }
        }
    }

    #[test]
    fn observable_names_round_trip() {
        for name in ["n_3", "a_0", "nn_1_2", "N", "rho_0_1_2"] {
            assert_eq!(GwObservable::parse(name).unwrap().name(), name);
        }
        for bad in ["n_", "rho_1_2", "x", "nn_1"] {
            assert!(GwObservable::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn normalization_is_kept() {
        let p = GutzwillerParams::new(3, 3, 0.5, 1.0)
            .with_boundary(Boundary::Periodic)
            .with_dissipator(GwDissipator::Dephasing { gamma: 0.2 });
        let mut s = GutzwillerState::uniform(3, &coherent_like(3)).unwrap();
        let mut rng = RngStream::new(9, 1);
        for _ in 0..500 {
            gw_step(&mut s, &p, 0.01, &mut rng).unwrap();
            s.check_normalized().unwrap();
        }
    }
}
