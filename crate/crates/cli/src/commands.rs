use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use qtraj::gutzwiller::{run_gw_ensemble, run_gw_trajectory, GwEnsembleConfig};
use qtraj::linalg::{C64, DENSE_LIMIT};
use qtraj::oracle::{expectation_dm, integrate_master, integrate_master_schedule, pure_density, purity};
use qtraj::rng::RngStream;
use qtraj::stats::{EnsembleAccumulator, EnsembleResult};
use qtraj::trajectory::{
    run_ensemble, run_ensemble_schedule, run_trajectory, run_trajectory_schedule, EnsembleConfig,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{exact_setup, gutzwiller_setup, Backend, ExactSetup, RunConfig};
use crate::error::CliError;
use crate::output::{float, write_ensemble, ExactTable, EXACT_FILE};

/// Points further than this many standard errors from the exact value fail
/// a comparison.
pub const COMPARE_FAIL_SIGMA: f64 = 5.0;

/// Absolute tolerance for points whose standard error is zero.
pub const ZERO_STDERR_TOL: f64 = 1e-9;

fn seeds(cfg: &RunConfig, n_traj: usize) -> Value {
    json!({
        "rng": "chacha8",
        "base_seed": cfg.base_seed,
        "trajectory_streams": {"first": 0, "count": n_traj},
        "rule": "trajectory i draws from RngStream::new(base_seed, i)",
    })
}

fn write_summary(dir: &Path, command: &str, cfg: &RunConfig, extra: Value, started: Instant) -> Result<(), CliError> {
    let mut summary = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "workers": cfg.workers(),
    });
    let map = summary.as_object_mut().expect("summary is an object");
    if let Value::Object(extra) = extra {
        map.extend(extra);
    }
    map.insert("wall_time_s".into(), json!(started.elapsed().as_secs_f64()));
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(format!("{command}_summary.json")), text + "\n")?;
    Ok(())
}

fn ensemble(cfg: &RunConfig) -> Result<EnsembleResult, CliError> {
    let times = cfg.report_times()?;
    let res = match cfg.backend {
        Backend::ExactBasis => {
            let ExactSetup { schedule, initial, observables, built } = exact_setup(cfg)?;
            let ecfg = EnsembleConfig::new(cfg.n_traj, cfg.base_seed, cfg.step_config()?).with_workers(cfg.workers());
            match &schedule {
                Some(s) => run_ensemble_schedule(s, &initial, &times, &observables, &ecfg)?,
                None => run_ensemble(built.model(), &initial, &times, &observables, &ecfg)?,
            }
        }
        Backend::Gutzwiller => {
            let setup = gutzwiller_setup(cfg)?;
            let gcfg = GwEnsembleConfig::new(cfg.n_traj, cfg.base_seed, cfg.gutzwiller_dt()?).with_workers(cfg.workers());
            run_gw_ensemble(&setup.params, &setup.initial, &times, &setup.observables, &gcfg)?
        }
    };
    Ok(res)
}

fn run_summary(res: &EnsembleResult, cfg: &RunConfig) -> Value {
    json!({
        "model": res.metadata.model,
        "scheme": res.metadata.scheme,
        "seeds": seeds(cfg, cfg.n_traj),
        "n_traj_requested": res.metadata.n_traj_requested,
        "n_traj_used": res.metadata.n_traj_used,
        "aborted": res.metadata.aborted,
        "warnings": res.metadata.warnings,
    })
}

/// Run the ensemble and write one CSV per observable plus a JSON summary.
pub fn simulate(cfg: &RunConfig) -> Result<EnsembleResult, CliError> {
    let started = Instant::now();
    let dir = cfg.output_dir();
    let res = ensemble(cfg)?;
    if res.metadata.n_traj_used == 0 {
        write_summary(&dir, "simulate", cfg, run_summary(&res, cfg), started)?;
        return Err(CliError::AllAborted(cfg.n_traj));
    }
    let files = write_ensemble(&dir, &res)?;
    let mut extra = run_summary(&res, cfg);
    extra["files"] = json!(files);
    write_summary(&dir, "simulate", cfg, extra, started)?;
    info!("wrote {} series to {}", files.len(), dir.display());
    Ok(res)
}

fn oracle_setup(cfg: &RunConfig) -> Result<ExactSetup, CliError> {
    if cfg.backend != Backend::ExactBasis {
        return Err(CliError::Config("backend: the oracle needs the exact_basis backend".into()));
    }
    let setup = exact_setup(cfg)?;
    let dim = setup.built.model().dim();
    if dim > DENSE_LIMIT {
        return Err(CliError::OracleSize { dim, max: DENSE_LIMIT });
    }
    Ok(setup)
}

fn exact_values(setup: &ExactSetup, cfg: &RunConfig, times: &[f64]) -> Result<ExactTable, CliError> {
    let model = setup.built.model();
    let rho0 = pure_density(model, setup.initial.sector, &setup.initial.psi)?;
    let rhos = match &setup.schedule {
        Some(s) => integrate_master_schedule(s, &rho0, times, &cfg.oracle_config())?,
        None => integrate_master(model, &rho0, times, &cfg.oracle_config())?,
    };
    let mut values = Vec::with_capacity(setup.observables.len());
    for obs in &setup.observables {
        let full = obs.to_full()?;
        values.push(rhos.iter().map(|rho| expectation_dm(&full, rho)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(ExactTable {
        times: times.to_vec(),
        names: setup.observables.iter().map(|o| o.name.clone()).collect(),
        values,
        purity: rhos.iter().map(purity).collect(),
    })
}

/// Integrate the master equation and write `exact.csv`.
pub fn exact(cfg: &RunConfig) -> Result<ExactTable, CliError> {
    let started = Instant::now();
    let setup = oracle_setup(cfg)?;
    let table = exact_values(&setup, cfg, &cfg.report_times()?)?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(EXACT_FILE), table.to_csv())?;
    let extra = json!({"dim": setup.built.model().dim(), "oracle": {"dt": cfg.oracle_config().dt, "tol": cfg.oracle_config().tol}});
    write_summary(&dir, "exact", cfg, extra, started)?;
    Ok(table)
}

/// `|mean − exact| / stderr` for one component; zero standard errors are
/// compared with an absolute tolerance.
fn z_score(mean: f64, stderr: Option<f64>, exact: f64) -> f64 {
    let diff = (mean - exact).abs();
    match stderr {
        Some(s) if s > 0.0 => diff / s,
        _ if diff <= ZERO_STDERR_TOL => 0.0,
        _ => f64::INFINITY,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub n_points: usize,
    pub within: [f64; 3],
    pub max_z: f64,
}

/// Run the ensemble, obtain exact values (from `exact_dir` or the oracle)
/// and score every (time, observable) point.
pub fn compare(cfg: &RunConfig, exact_dir: Option<&Path>) -> Result<CompareReport, CliError> {
    let started = Instant::now();
    let table = match exact_dir {
        Some(d) => {
            let path = d.join(EXACT_FILE);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
            ExactTable::from_csv(&text)?
        }
        None => exact_values(&oracle_setup(cfg)?, cfg, &cfg.report_times()?)?,
    };
    let res = simulate(cfg)?;
    if table.times.len() != res.times.len()
        || table.times.iter().zip(&res.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return Err(CliError::MissingInput("exact report times differ from the simulation grid".into()));
    }

    let mut csv = String::from("observable,time,mean,stderr,exact,z\n");
    let mut zs = Vec::new();
    for (name, series) in res.observables.iter().zip(&res.estimates) {
        let Some(exact) = table.series(name) else { continue };
        for ((t, est), x) in res.times.iter().zip(series).zip(exact) {
            let z = z_score(est.mean().re, est.stderr_re, x.re).max(z_score(est.mean().im, est.stderr_im, x.im));
            csv.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                float(*t),
                float(est.mean().re),
                est.stderr_re.map(float).unwrap_or_default(),
                float(x.re),
                float(z)
            ));
            zs.push(z);
        }
    }
    if zs.is_empty() {
        return Err(CliError::MissingInput("no observable appears in both the simulation and the exact table".into()));
    }
    let frac = |k: f64| zs.iter().filter(|z| **z <= k).count() as f64 / zs.len() as f64;
    let report = CompareReport {
        n_points: zs.len(),
        within: [frac(1.0), frac(2.0), frac(3.0)],
        max_z: zs.iter().cloned().fold(0.0, f64::max),
    };
    let dir = cfg.output_dir();
    fs::write(dir.join("compare.csv"), csv)?;
    let extra = json!({
        "seeds": seeds(cfg, cfg.n_traj),
        "exact_source": exact_dir.map(|d| d.display().to_string()).unwrap_or_else(|| "oracle".into()),
        "n_points": report.n_points,
        "within_1_sigma": report.within[0],
        "within_2_sigma": report.within[1],
        "within_3_sigma": report.within[2],
        "max_z": if report.max_z.is_finite() { json!(report.max_z) } else { json!("inf") },
        "fail_sigma": COMPARE_FAIL_SIGMA,
    });
    write_summary(&dir, "compare", cfg, extra, started)?;
    println!(
        "{} points: {:.1}% within 1 sigma, {:.1}% within 2 sigma, {:.1}% within 3 sigma, max z {:.2}",
        report.n_points,
        100.0 * report.within[0],
        100.0 * report.within[1],
        100.0 * report.within[2],
        report.max_z
    );
    if report.max_z > COMPARE_FAIL_SIGMA {
        return Err(CliError::CompareFailed(format!(
            "largest deviation is {:.2} standard errors (limit {COMPARE_FAIL_SIGMA})",
            report.max_z
        )));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub n_used: usize,
    pub mean: C64,
    pub stderr: Option<f64>,
    pub abs_error: Option<f64>,
}

/// Statistical error against sample size at one time. Samples are nested:
/// the first `N` trajectories of a larger run form the size-`N` sample.
pub fn convergence(cfg: &RunConfig, n_grid: Option<Vec<usize>>) -> Result<Vec<ConvergenceRow>, CliError> {
    let started = Instant::now();
    let conv = cfg.convergence.clone();
    let grid = n_grid
        .or_else(|| conv.as_ref().map(|s| s.n_grid.clone()))
        .ok_or_else(|| CliError::Config("convergence.n_grid: required (or pass --n-grid)".into()))?;
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config("convergence.n_grid: must be positive and strictly increasing".into()));
    }
    let times = cfg.report_times()?;
    let time = conv.as_ref().and_then(|s| s.time).unwrap_or(times[times.len() - 1]);
    let name = conv.as_ref().and_then(|s| s.observable.clone()).unwrap_or_else(|| cfg.observables[0].clone());
    let n_max = grid[grid.len() - 1];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;

    let (samples, exact): (Vec<Option<C64>>, Option<C64>) = match cfg.backend {
        Backend::ExactBasis => {
            let setup = exact_setup(cfg)?;
            let obs = setup.built.observable(&name)?;
            let step = cfg.step_config()?;
            let one = |i: usize| {
                let mut rng = RngStream::new(cfg.base_seed, i as u64);
                let rec = match &setup.schedule {
                    Some(s) => run_trajectory_schedule(s, &setup.initial, &[time], std::slice::from_ref(&obs), &step, &mut rng),
                    None => run_trajectory(setup.built.model(), &setup.initial, &[time], std::slice::from_ref(&obs), &step, &mut rng),
                };
                rec.map(|r| r.samples[0][0]).ok()
            };
            let samples = pool.install(|| (0..n_max).into_par_iter().map(one).collect());
            let exact = if setup.built.model().dim() <= DENSE_LIMIT {
                let mut single = cfg.clone();
                single.observables = vec![name.clone()];
                let setup = exact_setup(&single)?;
                Some(exact_values(&setup, cfg, &[time])?.values[0][0])
            } else {
                None
            };
            (samples, exact)
        }
        Backend::Gutzwiller => {
            let setup = gutzwiller_setup(cfg)?;
            let obs = qtraj::gutzwiller::GwObservable::parse(&name)?;
            let dt = cfg.gutzwiller_dt()?;
            let one = |i: usize| {
                let mut rng = RngStream::new(cfg.base_seed, i as u64);
                run_gw_trajectory(&setup.params, &setup.initial, &[time], std::slice::from_ref(&obs), dt, &mut rng).map(|r| r.0[0][0]).ok()
            };
            (pool.install(|| (0..n_max).into_par_iter().map(one).collect()), None)
        }
    };

    let mut acc = EnsembleAccumulator::new(1, 1);
    let mut rows = Vec::with_capacity(grid.len());
    let mut next = 0;
    for (i, s) in samples.iter().enumerate() {
        if let Some(x) = s {
            acc.accumulate(0, 0, *x)?;
        }
        if i + 1 == grid[next] {
            let n_used = acc.count(0, 0)? as usize;
            if n_used == 0 {
                return Err(CliError::AllAborted(i + 1));
            }
            let est = acc.estimate(0, 0)?;
            rows.push(ConvergenceRow {
                n: i + 1,
                n_used,
                mean: est.mean(),
                stderr: est.stderr(),
                abs_error: exact.map(|x| (est.mean() - x).norm()),
            });
            next += 1;
        }
    }

    let mut csv = String::from("n,mean,stderr,abs_error,n_traj\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            float(r.mean.re),
            r.stderr.map(float).unwrap_or_default(),
            r.abs_error.map(float).unwrap_or_default(),
            r.n_used
        ));
    }
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("convergence.csv"), csv)?;
    let fitted: Vec<(f64, f64)> =
        rows.iter().filter_map(|r| r.stderr.filter(|s| *s > 0.0).map(|s| ((r.n as f64).ln(), s.ln()))).collect();
    let slope = (fitted.len() >= 2).then(|| log_log_slope(&fitted));
    let extra = json!({
        "seeds": seeds(cfg, n_max),
        "observable": name,
        "time": time,
        "exact": exact.map(|x| json!([x.re, x.im])),
        "stderr_slope": slope,
        "aborted": samples.iter().filter(|s| s.is_none()).count(),
    });
    write_summary(&dir, "convergence", cfg, extra, started)?;
    Ok(rows)
}

/// Least-squares slope through `(x, y)` pairs.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores_handle_zero_stderr() {
        assert_eq!(z_score(1.0, Some(0.5), 0.0), 2.0);
        assert_eq!(z_score(1.0, Some(0.0), 1.0 + 1e-12), 0.0);
        assert_eq!(z_score(1.0, None, 1.1), f64::INFINITY);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [10.0f64, 100.0, 1000.0].iter().map(|n| (n.ln(), (2.0 / n.sqrt()).ln())).collect();
        assert!((log_log_slope(&pts) + 0.5).abs() < 1e-12);
    }
}
