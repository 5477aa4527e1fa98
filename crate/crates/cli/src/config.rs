use std::path::{Path, PathBuf};

use qtraj::catalog::{
    bose_hubbard, hardcore_chain, two_level, two_level_observable, two_level_state, Boundary, Dissipator,
    LatticeModel, LatticeModelParams, TwoLevelParams,
};
use qtraj::gutzwiller::{GutzwillerParams, GutzwillerState, GwDissipator, GwObservable};
use qtraj::linalg::{StateVector, C64};
use qtraj::model::{LindbladModel, Observable};
use qtraj::oracle::OracleConfig;
use qtraj::trajectory::{Schedule, Scheme, StepConfig, TrajectoryState};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    ExactBasis,
    Gutzwiller,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardcoreParams {
    pub sites: usize,
    pub particles: usize,
    pub j: f64,
    pub gamma: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "parameters", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    TwoLevel(TwoLevelParams),
    BoseHubbard(LatticeModelParams),
    HardcoreChain(HardcoreParams),
}

/// One piece of a piecewise-constant schedule. `until` may be omitted on
/// the last segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub until: Option<f64>,
    pub model: ModelConfig,
}

/// Complex numbers are written as `[re, im]`.
pub type ComplexValue = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Index into the first sector's basis.
    BasisState(usize),
    /// Lattice number state.
    Occupation(Vec<usize>),
    /// Lowest eigenvector of the first sector's Hamiltonian.
    GroundState,
    /// Amplitudes in the first sector's basis; normalized on load.
    Amplitudes(Vec<ComplexValue>),
    /// Gutzwiller product state with the same local coefficients on every site.
    Uniform(Vec<ComplexValue>),
    /// Gutzwiller coefficients `[site][n]`.
    SiteAmplitudes(Vec<Vec<ComplexValue>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    pub dt: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_grid: Vec<usize>,
    /// Defaults to the last report time.
    pub time: Option<f64>,
    /// Defaults to the first observable.
    pub observable: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<SegmentConfig>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Euler step for `first_order` and the Gutzwiller backend, bracketing
    /// step for `jump_time`.
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub dt_report: Option<f64>,
    pub report_times: Option<Vec<f64>>,
    pub n_traj: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
    pub initial_state: InitialConfig,
    pub observables: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub oracle: Option<OracleSettings>,
    pub convergence: Option<ConvergenceConfig>,
}

fn default_scheme() -> Scheme {
    Scheme::JumpTime
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub n_traj: Option<usize>,
    pub base_seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub scheme: Option<Scheme>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => config_error(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.n_traj {
            self.n_traj = n;
        }
        if let Some(s) = o.base_seed {
            self.base_seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = Some(w);
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = Some(d.clone());
        }
        if let Some(s) = o.scheme {
            self.scheme = s;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if self.n_traj == 0 {
            return Err(config_error("n_traj: must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(config_error("workers: must be at least 1"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(config_error(format!("dt: must be positive, got {dt}")));
            }
        }
        if self.observables.is_empty() {
            return Err(config_error("observables: at least one observable is required"));
        }
        if self.backend == Backend::Gutzwiller && !self.schedule.is_empty() {
            return Err(config_error("schedule: not supported by the gutzwiller backend"));
        }
        if let Some(o) = &self.oracle {
            if !(o.dt > 0.0) || !(o.tol > 0.0) {
                return Err(config_error("oracle: dt and tol must be positive"));
            }
        }
        self.report_times()?;
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("qtraj_output"))
    }

    pub fn oracle_config(&self) -> OracleConfig {
        self.oracle.as_ref().map(|o| OracleConfig { dt: o.dt, tol: o.tol }).unwrap_or_default()
    }

    /// Either the explicit list or `0, dt_report, ..., t_max`.
    pub fn report_times(&self) -> Result<Vec<f64>, CliError> {
        let times = match (&self.report_times, self.t_max, self.dt_report) {
            (Some(times), None, None) => times.clone(),
            (None, Some(t_max), Some(dt)) => {
                if !(t_max >= 0.0) || !(dt > 0.0) || !t_max.is_finite() {
                    return Err(config_error("t_max/dt_report: need t_max >= 0 and dt_report > 0"));
                }
                let n = (t_max / dt + 1e-9).floor() as usize;
                (0..=n).map(|k| k as f64 * dt).collect()
            }
            _ => return Err(config_error("report_times: give either report_times or both t_max and dt_report")),
        };
        if times.is_empty() {
            return Err(config_error("report_times: empty"));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(config_error("report_times: must be finite, non-negative and strictly increasing"));
        }
        Ok(times)
    }

    pub fn step_config(&self) -> Result<StepConfig, CliError> {
        match self.scheme {
            Scheme::FirstOrder => {
                let dt = self.dt.ok_or_else(|| config_error("dt: required for the first_order scheme"))?;
                Ok(StepConfig::first_order(dt))
            }
            Scheme::JumpTime => {
                let times = self.report_times()?;
                let fallback = self.dt_report.unwrap_or_else(|| (times[times.len() - 1] / 10.0).max(1e-3));
                Ok(StepConfig::jump_time(self.dt.unwrap_or(fallback)))
            }
        }
    }

    pub fn gutzwiller_dt(&self) -> Result<f64, CliError> {
        self.dt.ok_or_else(|| config_error("dt: required for the gutzwiller backend"))
    }
}

/// A model assembled from a [`ModelConfig`].
pub enum Built {
    TwoLevel(LindbladModel),
    Lattice(Box<LatticeModel>),
}

impl Built {
    pub fn model(&self) -> &LindbladModel {
        match self {
            Built::TwoLevel(m) => m,
            Built::Lattice(l) => &l.model,
        }
    }

    pub fn observable(&self, name: &str) -> Result<Observable, CliError> {
        let res = match self {
            Built::TwoLevel(_) => two_level_observable(name),
            Built::Lattice(l) => l.observable_by_name(name),
        };
        res.map_err(|e| config_error(format!("observables: {e}")))
    }
}

fn lib_config_error(field: &str, e: qtraj::Error) -> CliError {
    match e {
        qtraj::Error::SizeExceeded { dim, max } => CliError::OracleSize { dim, max },
        other => config_error(format!("{field}: {other}")),
    }
}

pub fn build_model(model: &ModelConfig) -> Result<Built, CliError> {
    let err = |e| lib_config_error("model", e);
    Ok(match model {
        ModelConfig::TwoLevel(p) => Built::TwoLevel(two_level(p).map_err(err)?),
        ModelConfig::BoseHubbard(p) => Built::Lattice(Box::new(bose_hubbard(p).map_err(err)?)),
        ModelConfig::HardcoreChain(p) => {
            Built::Lattice(Box::new(hardcore_chain(p.sites, p.particles, p.j, p.gamma, p.boundary).map_err(err)?))
        }
    })
}

fn complex(v: &[ComplexValue]) -> Vec<C64> {
    v.iter().map(|[re, im]| C64::new(*re, *im)).collect()
}

/// Everything the exact-basis backend needs.
pub struct ExactSetup {
    pub built: Built,
    pub schedule: Option<Schedule>,
    pub initial: TrajectoryState,
    pub observables: Vec<Observable>,
}

pub fn exact_setup(cfg: &RunConfig) -> Result<ExactSetup, CliError> {
    let built = build_model(&cfg.model)?;
    let schedule = if cfg.schedule.is_empty() {
        None
    } else {
        let n = cfg.schedule.len();
        let mut segments = Vec::with_capacity(n);
        for (k, seg) in cfg.schedule.iter().enumerate() {
            let until = match seg.until {
                Some(t) => t,
                None if k + 1 == n => f64::INFINITY,
                None => return Err(config_error(format!("schedule[{k}].until: required except on the last segment"))),
            };
            segments.push((until, build_model(&seg.model)?.model().clone()));
        }
        Some(Schedule::new(segments).map_err(|e| lib_config_error("schedule", e))?)
    };
    let model = schedule.as_ref().map(|s| s.first_model()).unwrap_or(built.model());
    let dim0 = model.sector(0).dim();
    let err = |e| lib_config_error("initial_state", e);
    let initial = match (&cfg.initial_state, &built) {
        (InitialConfig::BasisState(i), Built::TwoLevel(_)) => two_level_state(*i).map_err(err)?,
        (InitialConfig::BasisState(i), _) => TrajectoryState::new(StateVector::basis(dim0, *i).map_err(err)?, 0),
        (InitialConfig::Occupation(occ), Built::Lattice(l)) => l.initial_state(occ).map_err(err)?,
        (InitialConfig::GroundState, Built::Lattice(l)) => l.ground_state().map_err(err)?.1,
        (InitialConfig::GroundState, Built::TwoLevel(m)) => {
            let (_, psi) = qtraj::linalg::lowest_eigenpair(&m.sector(0).hamiltonian).map_err(err)?;
            TrajectoryState::new(psi, 0)
        }
        (InitialConfig::Amplitudes(a), _) => {
            if a.len() != dim0 {
                return Err(config_error(format!("initial_state: {} amplitudes for dimension {dim0}", a.len())));
            }
            TrajectoryState::new(StateVector::new(complex(a)).normalized().map_err(err)?, 0)
        }
        (other, _) => {
            return Err(config_error(format!("initial_state: {other:?} is not valid for this model and backend")))
        }
    };
    let observables = cfg.observables.iter().map(|n| built.observable(n)).collect::<Result<Vec<_>, _>>()?;
    Ok(ExactSetup { built, schedule, initial, observables })
}

/// Everything the Gutzwiller backend needs.
pub struct GutzwillerSetup {
    pub params: GutzwillerParams,
    pub initial: GutzwillerState,
    pub observables: Vec<GwObservable>,
}

/// Reads a `bose_hubbard` model as Gutzwiller parameters. `particles` is
/// ignored; the initial product state sets the filling.
pub fn gutzwiller_setup(cfg: &RunConfig) -> Result<GutzwillerSetup, CliError> {
    let ModelConfig::BoseHubbard(p) = &cfg.model else {
        return Err(config_error("model: the gutzwiller backend requires a bose_hubbard model"));
    };
    let dissipator = match &p.dissipator {
        Dissipator::None => GwDissipator::None,
        Dissipator::Dephasing { gamma } => GwDissipator::Dephasing { gamma: *gamma },
        Dissipator::OneBodyLoss { rates } => GwDissipator::OneBodyLoss { rates: rates.clone() },
        other => {
            return Err(config_error(format!("model.parameters.dissipator: {other:?} is not supported by the gutzwiller backend")))
        }
    };
    let params = GutzwillerParams {
        sites: p.sites,
        n_max: p.n_max,
        j: p.j,
        u: p.u,
        offsets: p.offsets.clone(),
        boundary: p.boundary,
        dissipator,
    };
    params.validate().map_err(|e| lib_config_error("model", e))?;
    let err = |e| lib_config_error("initial_state", e);
    let initial = match &cfg.initial_state {
        InitialConfig::Occupation(occ) => GutzwillerState::number_state(occ, p.n_max).map_err(err)?,
        InitialConfig::Uniform(local) => GutzwillerState::uniform(p.sites, &complex(local)).map_err(err)?,
        InitialConfig::SiteAmplitudes(sites) => {
            GutzwillerState::new(sites.iter().map(|s| complex(s)).collect()).map_err(err)?
        }
        other => {
            return Err(config_error(format!("initial_state: {other:?} is not valid for the gutzwiller backend")))
        }
    };
    let observables = cfg
        .observables
        .iter()
        .map(|n| GwObservable::parse(n).map_err(|e| config_error(format!("observables: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GutzwillerSetup { params, initial, observables })
}
