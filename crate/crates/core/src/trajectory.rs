//! Quantum trajectory propagation.
//!
//! Two unravelings of the same master equation are provided:
//!
//! * [`Scheme::FirstOrder`]: fixed Euler steps under `H_eff`, with a jump
//!   decision made once per step.
//! * [`Scheme::JumpTime`]: the state is propagated exactly under `H_eff`
//!   until its squared norm falls to a uniformly drawn threshold, at which
//!   point a jump is applied.
//!
//! Ensembles run in fixed blocks of trajectories on a private rayon pool.
//! Blocks are merged in stream order, so results are bit-identical for any
//! worker count.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, StateVector, TaylorWorkspace, C64, DEFAULT_PROPAGATOR_TOL, ZERO};
use crate::model::{LindbladModel, Observable};
use crate::rng::RngStream;
use crate::stats::{EnsembleAccumulator, EnsembleResult, RunMetadata};

/// Norm tolerance enforced after every public step.
pub const NORM_TOL: f64 = 1e-9;

/// Per-step jump probability above which the first-order step is too coarse.
pub const DELTA_P_WARN: f64 = 0.1;

/// Default norm² tolerance of the jump-time root search.
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

/// Name of the survival series every ensemble reports.
pub const NO_JUMP: &str = "no_jump";

const BLOCK_SIZE: usize = 16;
const MAX_BISECTIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FirstOrder,
    JumpTime,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::FirstOrder => "first_order",
            Scheme::JumpTime => "jump_time",
        }
    }
}

/// Numerical settings for one trajectory.
///
/// `dt` is the Euler step for [`Scheme::FirstOrder`] and the initial
/// bracketing step for [`Scheme::JumpTime`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub propagator_tol: f64,
    pub root_tol: f64,
}

impl StepConfig {
    pub fn first_order(dt: f64) -> Self {
        Self { scheme: Scheme::FirstOrder, dt, propagator_tol: DEFAULT_PROPAGATOR_TOL, root_tol: DEFAULT_ROOT_TOL }
    }

    pub fn jump_time(dt_report: f64) -> Self {
        Self { scheme: Scheme::JumpTime, dt: dt_report, propagator_tol: DEFAULT_PROPAGATOR_TOL, root_tol: DEFAULT_ROOT_TOL }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.propagator_tol > 0.0) || !(self.root_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: usize,
    pub label: String,
}

/// A pure state living in one sector of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    pub psi: StateVector,
    pub t: f64,
    pub sector: usize,
    pub jump_log: Vec<JumpEvent>,
}

impl TrajectoryState {
    pub fn new(psi: StateVector, sector: usize) -> Self {
        Self { psi, t: 0.0, sector, jump_log: Vec::new() }
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    fn check(&self, prepared: &Prepared<'_>) -> Result<()> {
        let dims = prepared.model.sector_dims();
        if self.sector >= dims.len() {
            return Err(Error::IndexOutOfRange { index: self.sector, len: dims.len() });
        }
        if self.psi.dim() != dims[self.sector] {
            return Err(Error::DimensionMismatch { expected: dims[self.sector], found: self.psi.dim() });
        }
        if !self.psi.is_normalized(NORM_TOL) {
            return Err(Error::NotNormalized { norm: self.psi.norm() });
        }
        Ok(())
    }
}

/// A model with the per-sector no-jump generators `−i H_eff` precomputed.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    model: &'a LindbladModel,
    generators: Vec<LinearOperator>,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a LindbladModel) -> Result<Self> {
        let heff = model.effective_hamiltonian()?;
        let generators = heff.generators.iter().map(|g| g.scale(C64::new(0.0, -1.0))).collect();
        Ok(Self { model, generators })
    }

    pub fn model(&self) -> &LindbladModel {
        self.model
    }

    fn max_dim(&self) -> usize {
        self.model.sector_dims().into_iter().max().unwrap_or(0)
    }
}

/// Per-channel jump probabilities of one first-order step.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaP {
    pub total: f64,
    pub per_channel: Vec<f64>,
}

/// Scratch space reused across steps of one trajectory.
#[derive(Debug, Clone)]
struct Workspace {
    taylor: TaylorWorkspace,
    buf: Vec<C64>,
    weights: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize, channels: usize) -> Self {
        Self { taylor: TaylorWorkspace::new(dim), buf: vec![ZERO; dim], weights: vec![0.0; channels] }
    }
}

/// `‖c_m ψ‖²` for every channel, written into `out`.
fn channel_weights(p: &Prepared<'_>, sector: usize, psi: &[C64], buf: &mut Vec<C64>, out: &mut [f64]) {
    for (w, block) in out.iter_mut().zip(&p.model.sector(sector).jumps) {
        *w = match block {
            Some(b) => {
                buf.resize(b.op.dim_out(), ZERO);
                b.op.apply_into(psi, buf);
                buf.iter().map(|a| a.norm_sqr()).sum()
            }
            None => 0.0,
        };
    }
}

/// Index of the first channel whose cumulative weight exceeds `r · total`.
fn select_channel(weights: &[f64], r: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = r * total;
    let mut cumulative = 0.0;
    for (m, &w) in weights.iter().enumerate() {
        cumulative += w;
        if target < cumulative && w > 0.0 {
            return Some(m);
        }
    }
    // rounding pushed the target past the last interval
    weights.iter().rposition(|&w| w > 0.0)
}

/// Apply channel `m` to `phi`, normalize, and log the jump.
fn perform_jump(p: &Prepared<'_>, state: &mut TrajectoryState, phi: &[C64], m: usize) -> Result<()> {
    let block = p.model.sector(state.sector).jumps[m]
        .as_ref()
        .ok_or(Error::InconsistentJump { channel: m })?;
    let mut out = vec![ZERO; block.op.dim_out()];
    block.op.apply_into(phi, &mut out);
    let mut psi = StateVector::new(out);
    psi.normalize().map_err(|_| Error::InconsistentJump { channel: m })?;
    state.psi = psi;
    state.sector = block.target;
    state.jump_log.push(JumpEvent { time: state.t, channel: m, label: p.model.labels()[m].clone() });
    Ok(())
}

/// `δp_m = dt ⟨ψ|c_m†c_m|ψ⟩` for the state's current sector.
pub fn delta_p(model: &LindbladModel, state: &TrajectoryState, dt: f64) -> Result<DeltaP> {
    let p = Prepared::new(model)?;
    state.check(&p)?;
    let mut per_channel = vec![0.0; model.n_jumps()];
    let mut buf = Vec::new();
    channel_weights(&p, state.sector, state.psi.amplitudes(), &mut buf, &mut per_channel);
    per_channel.iter_mut().for_each(|w| *w *= dt);
    let total = per_channel.iter().sum();
    if total > DELTA_P_WARN {
        warn!("jump probability per step is {total:.3}; dt = {dt} is too coarse");
    }
    Ok(DeltaP { total, per_channel })
}

/// One first-order step with explicit random numbers `r1` (jump or not)
/// and `r2` (which channel). Returns the channel that fired, if any.
///
/// Without a jump the state is `(1 − i H_eff dt) ψ` rescaled to unit norm.
pub fn step_first_order_with_draws(
    prepared: &Prepared<'_>,
    state: &mut TrajectoryState,
    dt: f64,
    r1: f64,
    r2: f64,
) -> Result<Option<usize>> {
    state.check(prepared)?;
    let mut ws = Workspace::new(prepared.max_dim(), prepared.model.n_jumps());
    first_order_step(prepared, state, dt, r1, r2, &mut ws).map(|(m, _)| m)
}

/// One first-order step drawing `r1` and, on a jump, `r2` from `rng`.
pub fn step_first_order(
    prepared: &Prepared<'_>,
    state: &mut TrajectoryState,
    dt: f64,
    rng: &mut RngStream,
) -> Result<Option<usize>> {
    state.check(prepared)?;
    let mut ws = Workspace::new(prepared.max_dim(), prepared.model.n_jumps());
    first_order_step_rng(prepared, state, dt, rng, &mut ws).map(|(m, _)| m)
}

fn first_order_step_rng(
    p: &Prepared<'_>,
    state: &mut TrajectoryState,
    dt: f64,
    rng: &mut RngStream,
    ws: &mut Workspace,
) -> Result<(Option<usize>, f64)> {
    let r1 = rng.uniform();
    // r2 is only consumed when a jump happens
    first_order_step_lazy(p, state, dt, r1, || rng.uniform(), ws)
}

fn first_order_step(
    p: &Prepared<'_>,
    state: &mut TrajectoryState,
    dt: f64,
    r1: f64,
    r2: f64,
    ws: &mut Workspace,
) -> Result<(Option<usize>, f64)> {
    first_order_step_lazy(p, state, dt, r1, || r2, ws)
}

fn first_order_step_lazy<F: FnOnce() -> f64>(
    p: &Prepared<'_>,
    state: &mut TrajectoryState,
    dt: f64,
    r1: f64,
    r2: F,
    ws: &mut Workspace,
) -> Result<(Option<usize>, f64)> {
    let sector = state.sector;
    channel_weights(p, sector, state.psi.amplitudes(), &mut ws.buf, &mut ws.weights);
    let total: f64 = ws.weights.iter().sum::<f64>() * dt;
    // jumps are logged at the end of the step
    state.t += dt;

    if r1 < total {
        let m = select_channel(&ws.weights, r2()).ok_or(Error::NoJumpPossible)?;
        let phi = std::mem::replace(&mut state.psi, StateVector::zeros(0));
        perform_jump(p, state, phi.amplitudes(), m)?;
        return Ok((Some(m), total));
    }

    let gen = &p.generators[sector];
    let psi = state.psi.amplitudes_mut();
    ws.buf.resize(psi.len(), ZERO);
    gen.apply_into(psi, &mut ws.buf);
    for (a, g) in psi.iter_mut().zip(&ws.buf) {
        *a += g * dt;
    }
    state.psi.normalize()?;
    Ok((None, total))
}

/// `exp(−i H_eff (t1 − t0)) ψ` without renormalization, and its squared norm.
pub fn survival_propagate(
    prepared: &Prepared<'_>,
    psi: &StateVector,
    sector: usize,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<(StateVector, f64)> {
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let gen = prepared.generators.get(sector).ok_or(Error::IndexOutOfRange {
        index: sector,
        len: prepared.generators.len(),
    })?;
    let phi = crate::linalg::expm_action(gen, psi, t1 - t0, tol)?;
    let n2 = phi.norm_sqr();
    Ok((phi, n2))
}

/// Result of a jump-time search.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpSample {
    /// The squared norm reached the threshold at `t`. `phi` is unnormalized.
    JumpAt { t: f64, phi: StateVector, norm2: f64 },
    /// The squared norm stayed above the threshold up to `t_max`.
    NoJumpBefore { t_max: f64, phi: StateVector, norm2: f64 },
}

/// Find `t₁` with `‖exp(−iH_eff(t₁ − t))ψ‖² = r`, searching up to `t_max`.
///
/// The crossing is bracketed by steps of `config.dt` that double after each
/// step without a crossing, then refined by bisection until the squared
/// norm is within `config.root_tol` of `r`. Each bisection probe propagates
/// from the lower bracket end.
pub fn sample_jump_time(
    prepared: &Prepared<'_>,
    state: &TrajectoryState,
    r: f64,
    t_max: f64,
    config: &StepConfig,
) -> Result<JumpSample> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {r}")));
    }
    config.validate()?;
    let mut ws = TaylorWorkspace::new(state.psi.dim());
    search_jump(prepared, &mut ws, state.psi.amplitudes(), state.sector, state.t, r, t_max, config)
}

#[allow(clippy::too_many_arguments)]
fn search_jump(
    p: &Prepared<'_>,
    ws: &mut TaylorWorkspace,
    psi: &[C64],
    sector: usize,
    t0: f64,
    r: f64,
    t_max: f64,
    config: &StepConfig,
) -> Result<JumpSample> {
    let gen = &p.generators[sector];
    // probes must resolve norm² well below the root tolerance
    let tol = config.propagator_tol.min(0.1 * config.root_tol);
    let mut a = t0;
    let mut phi_a = psi.to_vec();
    let mut n_a: f64 = phi_a.iter().map(|x| x.norm_sqr()).sum();
    let mut h = config.dt;

    // bracket
    let (mut b, mut phi_b, mut n_b) = loop {
        if a >= t_max {
            return Ok(JumpSample::NoJumpBefore { t_max, phi: StateVector::new(phi_a), norm2: n_a });
        }
        let b = (a + h).min(t_max);
        let mut phi = phi_a.clone();
        ws.propagate(gen, &mut phi, b - a, tol)?;
        let n: f64 = phi.iter().map(|x| x.norm_sqr()).sum();
        if n <= r {
            break (b, phi, n);
        }
        a = b;
        phi_a = phi;
        n_a = n;
        h *= 2.0;
    };

    // bisect
    for _ in 0..MAX_BISECTIONS {
        if (n_b - r).abs() <= config.root_tol {
            return Ok(JumpSample::JumpAt { t: b, phi: StateVector::new(phi_b), norm2: n_b });
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let mut phi = phi_a.clone();
        ws.propagate(gen, &mut phi, m - a, tol)?;
        let n: f64 = phi.iter().map(|x| x.norm_sqr()).sum();
        if n > r {
            a = m;
            phi_a = phi;
            n_a = n;
        } else {
            b = m;
            phi_b = phi;
            n_b = n;
        }
    }
    if (n_a - r).abs() <= config.root_tol {
        return Ok(JumpSample::JumpAt { t: a, phi: StateVector::new(phi_a), norm2: n_a });
    }
    Err(Error::RootStagnation { achieved: (n_b - r).abs().min((n_a - r).abs()) })
}

/// Apply a jump to `state.psi` (normalized or not) at `state.t`, choosing
/// the channel with probability `∝ ‖c_m ψ‖²`.
pub fn apply_jump(prepared: &Prepared<'_>, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<usize> {
    let mut weights = vec![0.0; prepared.model.n_jumps()];
    let mut buf = Vec::new();
    channel_weights(prepared, state.sector, state.psi.amplitudes(), &mut buf, &mut weights);
    let m = select_channel(&weights, rng.uniform()).ok_or(Error::NoJumpPossible)?;
    let phi = std::mem::replace(&mut state.psi, StateVector::zeros(0));
    perform_jump(prepared, state, phi.amplitudes(), m)?;
    Ok(m)
}

/// Piecewise-constant time dependence: model `k` applies until
/// `segments[k].0`. The last segment extends indefinitely.
#[derive(Clone, Debug)]
pub struct Schedule {
    segments: Vec<(f64, LindbladModel)>,
}

impl Schedule {
    pub fn new(segments: Vec<(f64, LindbladModel)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one segment".into()));
        }
        let dims = segments[0].1.sector_dims();
        let labels = segments[0].1.labels().to_vec();
        let mut last = f64::NEG_INFINITY;
        for (until, m) in &segments {
            if !(*until > last) {
                return Err(Error::InvalidArgument("schedule boundaries must increase".into()));
            }
            last = *until;
            if m.sector_dims() != dims || m.labels() != labels.as_slice() {
                return Err(Error::SectorMismatch("schedule segments must share sectors and jump labels".into()));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, LindbladModel)] {
        &self.segments
    }

    pub fn first_model(&self) -> &LindbladModel {
        &self.segments[0].1
    }
}

impl From<LindbladModel> for Schedule {
    fn from(model: LindbladModel) -> Self {
        Self { segments: vec![(f64::INFINITY, model)] }
    }
}

/// Prepared segments plus the propagation loop shared by all runners.
pub(crate) struct Engine<'a> {
    segments: Vec<(f64, Prepared<'a>)>,
    config: StepConfig,
}

impl<'a> Engine<'a> {
    pub(crate) fn single(model: &'a LindbladModel, config: &StepConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { segments: vec![(f64::INFINITY, Prepared::new(model)?)], config: *config })
    }

    pub(crate) fn schedule(schedule: &'a Schedule, config: &StepConfig) -> Result<Self> {
        config.validate()?;
        let segments = schedule
            .segments
            .iter()
            .map(|(until, m)| Ok((*until, Prepared::new(m)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { segments, config: *config })
    }

    pub(crate) fn model(&self) -> &LindbladModel {
        self.segments[0].1.model
    }

    fn segment_for(&self, t_end: f64) -> &Prepared<'a> {
        let idx = self.segments.iter().position(|(until, _)| t_end <= *until).unwrap_or(self.segments.len() - 1);
        &self.segments[idx].1
    }

    /// Propagate `state` through every report time, calling `on_report` at
    /// each. Returns the largest per-step jump probability seen (first
    /// order only).
    pub(crate) fn drive<F>(
        &self,
        state: &mut TrajectoryState,
        report_times: &[f64],
        rng: &mut RngStream,
        mut on_report: F,
    ) -> Result<f64>
    where
        F: FnMut(usize, &TrajectoryState) -> Result<()>,
    {
        check_times(report_times, state.t)?;
        state.check(&self.segments[0].1)?;
        let mut ws = Workspace::new(self.segments[0].1.max_dim(), self.model().n_jumps());
        let mut max_dp = 0.0f64;
        let mut clock = JumpClock { r: 0.0, survival: 1.0 };
        if self.config.scheme == Scheme::JumpTime {
            clock.r = rng.uniform_open();
        }

        let boundaries: Vec<f64> = self.segments.iter().map(|(u, _)| *u).filter(|u| u.is_finite()).collect();
        for (k, &t_report) in report_times.iter().enumerate() {
            // stop at every schedule boundary on the way
            for &tb in &boundaries {
                if tb > state.t && tb < t_report {
                    self.advance(state, tb, rng, &mut ws, &mut clock, &mut max_dp)?;
                }
            }
            if t_report > state.t {
                self.advance(state, t_report, rng, &mut ws, &mut clock, &mut max_dp)?;
            }
            on_report(k, state)?;
        }
        Ok(max_dp)
    }

    fn advance(
        &self,
        state: &mut TrajectoryState,
        t_end: f64,
        rng: &mut RngStream,
        ws: &mut Workspace,
        clock: &mut JumpClock,
        max_dp: &mut f64,
    ) -> Result<()> {
        let p = self.segment_for(t_end);
        let t_start = state.t;
        match self.config.scheme {
            Scheme::FirstOrder => {
                let n = (((t_end - t_start) / self.config.dt) - 1e-9).ceil().max(1.0);
                let h = (t_end - t_start) / n;
                let steps = n as usize;
                for k in 1..=steps {
                    let (jumped, dp) = first_order_step_rng(p, state, h, rng, ws)?;
                    *max_dp = max_dp.max(dp);
                    state.t = if k == steps { t_end } else { t_start + k as f64 * h };
                    if jumped.is_some() {
                        state.jump_log.last_mut().expect("jump was logged").time = state.t;
                    }
                }
            }
            Scheme::JumpTime => loop {
                let threshold = clock.r / clock.survival;
                let sample = search_jump(
                    p,
                    &mut ws.taylor,
                    state.psi.amplitudes(),
                    state.sector,
                    state.t,
                    threshold,
                    t_end,
                    &self.config,
                )?;
                match sample {
                    JumpSample::NoJumpBefore { phi, norm2, .. } => {
                        clock.survival *= norm2;
                        state.psi = phi.normalized()?;
                        state.t = t_end;
                        break;
                    }
                    JumpSample::JumpAt { t, phi, .. } => {
                        state.t = t;
                        channel_weights(p, state.sector, phi.amplitudes(), &mut ws.buf, &mut ws.weights);
                        let m = select_channel(&ws.weights, rng.uniform()).ok_or(Error::NoJumpPossible)?;
                        perform_jump(p, state, phi.amplitudes(), m)?;
                        clock.r = rng.uniform_open();
                        clock.survival = 1.0;
                        if state.t >= t_end {
                            break;
                        }
                    }
                }
            },
        }
        Ok(())
    }
}

/// Random threshold and the survival accumulated since it was drawn.
#[derive(Clone, Copy, Debug)]
struct JumpClock {
    r: f64,
    survival: f64,
}

pub(crate) fn check_times(report_times: &[f64], t0: f64) -> Result<()> {
    let mut last = t0;
    for (k, &t) in report_times.iter().enumerate() {
        if !t.is_finite() || t < last || (k > 0 && t <= last) {
            return Err(Error::InvalidArgument(format!(
                "report times must be finite, increasing and not before t0 = {t0}"
            )));
        }
        last = t;
    }
    Ok(())
}

/// Expectation values of `observables` on the state's sector block.
pub(crate) fn sample_observables(observables: &[Observable], state: &TrajectoryState, out: &mut Vec<C64>) {
    for obs in observables {
        let block = &obs.blocks[state.sector];
        let v = block.quadratic_form(state.psi.amplitudes());
        out.push(if block.hermitian_hint() { C64::new(v.re, 0.0) } else { v });
    }
}

/// Everything recorded along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Indexed `[time][observable]`.
    pub samples: Vec<Vec<C64>>,
    pub jump_log: Vec<JumpEvent>,
    pub final_state: TrajectoryState,
    /// Largest first-order jump probability per step (0 for jump-time).
    pub max_delta_p: f64,
}

fn check_observables(observables: &[Observable], model: &LindbladModel) -> Result<()> {
    observables.iter().try_for_each(|o| o.check(model))
}

/// Propagate one trajectory and record observables at each report time.
pub fn run_trajectory(
    model: &LindbladModel,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    config: &StepConfig,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    check_observables(observables, model)?;
    let engine = Engine::single(model, config)?;
    record_trajectory(&engine, initial, report_times, observables, rng)
}

/// [`run_trajectory`] under a piecewise-constant schedule.
pub fn run_trajectory_schedule(
    schedule: &Schedule,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    config: &StepConfig,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    check_observables(observables, schedule.first_model())?;
    let engine = Engine::schedule(schedule, config)?;
    record_trajectory(&engine, initial, report_times, observables, rng)
}

fn record_trajectory(
    engine: &Engine<'_>,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    let mut state = initial.clone();
    let mut samples = Vec::with_capacity(report_times.len());
    let max_delta_p = engine.drive(&mut state, report_times, rng, |_, s| {
        let mut row = Vec::with_capacity(observables.len());
        sample_observables(observables, s, &mut row);
        samples.push(row);
        Ok(())
    })?;
    Ok(TrajectoryRecord {
        times: report_times.to_vec(),
        samples,
        jump_log: state.jump_log.clone(),
        final_state: state,
        max_delta_p,
    })
}

/// Settings shared by all ensemble runners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub step: StepConfig,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, base_seed: u64, step: StepConfig) -> Self {
        Self { n_traj, base_seed, workers: 1, step }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        self.step.validate()
    }
}

/// What a block of trajectories hands back to the reduction.
pub(crate) struct BlockOutcome<T> {
    pub value: T,
    pub used: usize,
    pub aborted: usize,
    pub errors: Vec<String>,
    pub max_delta_p: f64,
}

/// Run `n_traj` trajectories in fixed-size blocks on `workers` threads and
/// fold the per-block values in block order.
pub(crate) fn run_blocks<T, F, G>(
    n_traj: usize,
    workers: usize,
    make_block: F,
    mut fold: G,
) -> Result<(usize, usize, Vec<String>, f64)>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> BlockOutcome<T> + Sync,
    G: FnMut(T) -> Result<()>,
{
    let n_blocks = n_traj.div_ceil(BLOCK_SIZE);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<BlockOutcome<T>> = pool.install(|| {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| make_block(b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n_traj)))
            .collect()
    });
    let (mut used, mut aborted, mut errors, mut max_dp) = (0, 0, Vec::new(), 0.0f64);
    for o in outcomes {
        used += o.used;
        aborted += o.aborted;
        max_dp = max_dp.max(o.max_delta_p);
        errors.extend(o.errors);
        fold(o.value)?;
    }
    Ok((used, aborted, errors, max_dp))
}

const MAX_REPORTED_ERRORS: usize = 5;

fn metadata(model: &LindbladModel, cfg: &EnsembleConfig, used: usize, aborted: usize, errors: Vec<String>, max_dp: f64) -> RunMetadata {
    let mut warnings = Vec::new();
    if aborted > 0 {
        warnings.push(format!("{aborted} of {} trajectories aborted and were excluded", cfg.n_traj));
        warnings.extend(errors.into_iter().take(MAX_REPORTED_ERRORS));
    }
    if max_dp > DELTA_P_WARN {
        warnings.push(format!("largest jump probability per step was {max_dp:.3}; reduce dt"));
    }
    for w in &warnings {
        warn!("{w}");
    }
    RunMetadata {
        model: model.name().to_string(),
        scheme: cfg.step.scheme.as_str().to_string(),
        base_seed: cfg.base_seed,
        n_traj_requested: cfg.n_traj,
        n_traj_used: used,
        aborted,
        warnings,
    }
}

/// Ensemble averages of `observables` plus the [`NO_JUMP`] survival series.
///
/// Trajectory `i` uses `RngStream::new(base_seed, i)`. Trajectories that
/// fail numerically are excluded and counted in the metadata.
pub fn run_ensemble(
    model: &LindbladModel,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    check_observables(observables, model)?;
    cfg.validate()?;
    let engine = Engine::single(model, &cfg.step)?;
    ensemble_with(&engine, initial, report_times, observables, cfg)
}

/// [`run_ensemble`] under a piecewise-constant schedule.
pub fn run_ensemble_schedule(
    schedule: &Schedule,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    check_observables(observables, schedule.first_model())?;
    cfg.validate()?;
    let engine = Engine::schedule(schedule, &cfg.step)?;
    ensemble_with(&engine, initial, report_times, observables, cfg)
}

fn ensemble_with(
    engine: &Engine<'_>,
    initial: &TrajectoryState,
    report_times: &[f64],
    observables: &[Observable],
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    check_times(report_times, initial.t)?;
    initial.check(&engine.segments[0].1)?;
    let n_obs = observables.len() + 1;
    let n_times = report_times.len();

    let make_block = |range: std::ops::Range<usize>| {
        let mut acc = EnsembleAccumulator::new(n_times, n_obs);
        let mut out = BlockOutcome { value: (), used: 0, aborted: 0, errors: Vec::new(), max_delta_p: 0.0 };
        let mut row = Vec::with_capacity(n_times * n_obs);
        for i in range {
            let mut rng = RngStream::new(cfg.base_seed, i as u64);
            let mut state = initial.clone();
            row.clear();
            let res = engine.drive(&mut state, report_times, &mut rng, |_, s| {
                sample_observables(observables, s, &mut row);
                row.push(C64::new(if s.jump_log.is_empty() { 1.0 } else { 0.0 }, 0.0));
                Ok(())
            });
            match res {
                Ok(dp) => {
                    acc.accumulate_all(&row).expect("row shape matches accumulator");
                    out.used += 1;
                    out.max_delta_p = out.max_delta_p.max(dp);
                }
                Err(e) => {
                    out.aborted += 1;
                    out.errors.push(format!("trajectory {i}: {e}"));
                }
            }
        }
        BlockOutcome { value: acc, used: out.used, aborted: out.aborted, errors: out.errors, max_delta_p: out.max_delta_p }
    };

    let mut total = EnsembleAccumulator::new(n_times, n_obs);
    let (used, aborted, errors, max_dp) = run_blocks(cfg.n_traj, cfg.workers, make_block, |acc| total.merge(&acc))?;
    let mut names: Vec<String> = observables.iter().map(|o| o.name.clone()).collect();
    names.push(NO_JUMP.to_string());
    let meta = metadata(engine.model(), cfg, used, aborted, errors, max_dp);
    Ok(EnsembleResult::from_accumulator(report_times.to_vec(), names, &total, meta))
}

/// Ensemble-averaged projector `(1/N) Σ |ψ_i⟩⟨ψ_i|` in the full space of
/// the model at every report time.
pub fn ensemble_density_matrices(
    model: &LindbladModel,
    initial: &TrajectoryState,
    report_times: &[f64],
    cfg: &EnsembleConfig,
) -> Result<Vec<DMatrix<C64>>> {
    cfg.validate()?;
    let engine = Engine::single(model, &cfg.step)?;
    check_times(report_times, initial.t)?;
    initial.check(&engine.segments[0].1)?;
    let dim = model.dim();
    let zero = || vec![DMatrix::from_element(dim, dim, ZERO); report_times.len()];

    let make_block = |range: std::ops::Range<usize>| {
        let mut sums = zero();
        let mut used = 0;
        let mut errors = Vec::new();
        for i in range {
            let mut rng = RngStream::new(cfg.base_seed, i as u64);
            let mut state = initial.clone();
            let mut local = zero();
            let res = engine.drive(&mut state, report_times, &mut rng, |k, s| {
                let v = model.embed_state(s.sector, s.psi.amplitudes())?;
                let col = nalgebra::DVector::from_vec(v);
                local[k] += &col * col.adjoint();
                Ok(())
            });
            match res {
                Ok(_) => {
                    used += 1;
                    for (s, l) in sums.iter_mut().zip(&local) {
                        *s += l;
                    }
                }
                Err(e) => errors.push(format!("trajectory {i}: {e}")),
            }
        }
        let aborted = errors.len();
        BlockOutcome { value: sums, used, aborted, errors, max_delta_p: 0.0 }
    };

    let mut total = zero();
    let (used, aborted, _, _) = run_blocks(cfg.n_traj, cfg.workers, make_block, |sums| {
        for (t, s) in total.iter_mut().zip(&sums) {
            *t += s;
        }
        Ok(())
    })?;
    if aborted > 0 {
        warn!("{aborted} trajectories aborted and were excluded");
    }
    if used == 0 {
        return Err(Error::InvalidArgument("every trajectory aborted".into()));
    }
    let scale = C64::new(1.0 / used as f64, 0.0);
    Ok(total.into_iter().map(|m| m * scale).collect())
}
