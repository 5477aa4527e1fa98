//! Two-time correlations `C(t, τ) = ⟨A(t + τ) B(t)⟩` from trajectories.
//!
//! At time `t` each trajectory spawns four helper states
//! `χ^R_± ∝ (1 ± B)ψ` and `χ^I_± ∝ (1 ± iB)ψ`, propagates them as ordinary
//! trajectories over the delay grid, and recombines `⟨χ|A|χ⟩` with the
//! helper weights `μ`. Helper `k` draws from its own substream `k + 1` of
//! the parent trajectory's key, so the four continuations are independent.

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, StateVector, C64};
use crate::model::{LindbladModel, Observable};
use crate::rng::RngStream;
use crate::stats::{EnsembleAccumulator, EnsembleResult, RunMetadata};
use crate::trajectory::{run_blocks, BlockOutcome, EnsembleConfig, Engine, TrajectoryState, NORM_TOL};

/// Squared norms below this mark a helper as degenerate.
const DEGENERATE_MU: f64 = 1e-24;

/// Name of the single series returned by [`ensemble_two_time`].
pub const CORRELATION: &str = "correlation";

/// Helpers in the fixed order `R+, R−, I+, I−`.
#[derive(Clone, Debug, PartialEq)]
pub struct HelperSet {
    /// Normalized helper states, `None` where the combination vanished.
    pub states: [Option<StateVector>; 4],
    pub mu: [f64; 4],
}

impl HelperSet {
    pub fn is_degenerate(&self, k: usize) -> bool {
        self.states[k].is_none()
    }
}

/// Build the four helper states of `psi` for the operator `b`.
pub fn build_helpers(psi: &StateVector, b: &LinearOperator) -> Result<HelperSet> {
    if b.dim_in() != psi.dim() || b.dim_out() != psi.dim() {
        return Err(Error::DimensionMismatch { expected: psi.dim(), found: b.dim_in() });
    }
    if !psi.is_normalized(NORM_TOL) {
        return Err(Error::NotNormalized { norm: psi.norm() });
    }
    let b_psi = b.apply(psi)?;
    let coefficients = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)];
    let mut states: [Option<StateVector>; 4] = Default::default();
    let mut mu = [0.0; 4];
    for (k, coef) in coefficients.iter().enumerate() {
        let mut chi = psi.clone();
        chi.axpy(*coef, &b_psi)?;
        mu[k] = chi.norm_sqr();
        if mu[k] > DEGENERATE_MU {
            chi.normalize()?;
            states[k] = Some(chi);
        } else {
            mu[k] = 0.0;
        }
    }
    Ok(HelperSet { states, mu })
}

/// `¼[μ^R_+ c^R_+ − μ^R_− c^R_− − i μ^I_+ c^I_+ + i μ^I_− c^I_−]`.
pub fn reconstruct(mu: &[f64; 4], c: &[C64; 4]) -> C64 {
    let i = C64::new(0.0, 1.0);
    0.25 * (mu[0] * c[0] - mu[1] * c[1] - i * mu[2] * c[2] + i * mu[3] * c[3])
}

/// Ensemble estimate of `C(t, τ)` for every `τ` in `tau_grid`.
///
/// `a` and `b` are given block-wise on the model's sectors; `b` must
/// conserve the sector the trajectory occupies at time `t`.
pub fn ensemble_two_time(
    model: &LindbladModel,
    initial: &TrajectoryState,
    t: f64,
    tau_grid: &[f64],
    a: &Observable,
    b: &Observable,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    a.check(model)?;
    b.check(model)?;
    if cfg.n_traj == 0 || cfg.workers == 0 {
        return Err(Error::InvalidArgument("n_traj and workers must be at least 1".into()));
    }
    if !(t >= initial.t) {
        return Err(Error::InvalidArgument(format!("t = {t} precedes the initial time {}", initial.t)));
    }
    let engine = Engine::single(model, &cfg.step)?;
    let times: Vec<f64> = tau_grid.iter().map(|tau| t + tau).collect();
    let n_tau = tau_grid.len();

    let one_trajectory = |i: usize| -> Result<Vec<C64>> {
        let mut rng = RngStream::new(cfg.base_seed, i as u64);
        let mut state = initial.clone();
        engine.drive(&mut state, &[t], &mut rng, |_, _| Ok(()))?;
        let helpers = build_helpers(&state.psi, &b.blocks[state.sector])?;
        let mut samples = vec![[C64::new(0.0, 0.0); 4]; n_tau];
        for (k, chi) in helpers.states.iter().enumerate() {
            let Some(chi) = chi else { continue };
            let mut helper = TrajectoryState::new(chi.clone(), state.sector).at_time(state.t);
            let mut hrng = RngStream::with_substream(cfg.base_seed, i as u64, k as u64 + 1);
            engine.drive(&mut helper, &times, &mut hrng, |j, s| {
                samples[j][k] = a.blocks[s.sector].quadratic_form(s.psi.amplitudes());
                Ok(())
            })?;
        }
        Ok(samples.iter().map(|c| reconstruct(&helpers.mu, c)).collect())
    };

    let make_block = |range: std::ops::Range<usize>| {
        let mut acc = EnsembleAccumulator::new(n_tau, 1);
        let (mut used, mut errors) = (0, Vec::new());
        for i in range {
            match one_trajectory(i) {
                Ok(row) => {
                    acc.accumulate_all(&row).expect("row shape matches accumulator");
                    used += 1;
                }
                Err(e) => errors.push(format!("trajectory {i}: {e}")),
            }
        }
        let aborted = errors.len();
        BlockOutcome { value: acc, used, aborted, errors, max_delta_p: 0.0 }
    };

    let mut total = EnsembleAccumulator::new(n_tau, 1);
    let (used, aborted, errors, _) = run_blocks(cfg.n_traj, cfg.workers, make_block, |acc| total.merge(&acc))?;
    let mut warnings = Vec::new();
    if aborted > 0 {
        warnings.push(format!("{aborted} of {} trajectories aborted and were excluded", cfg.n_traj));
        warnings.extend(errors.into_iter().take(5));
    }
    let meta = RunMetadata {
        model: model.name().to_string(),
        scheme: cfg.step.scheme.as_str().to_string(),
        base_seed: cfg.base_seed,
        n_traj_requested: cfg.n_traj,
        n_traj_used: used,
        aborted,
        warnings,
    };
    Ok(EnsembleResult::from_accumulator(tau_grid.to_vec(), vec![CORRELATION.to_string()], &total, meta))
}
