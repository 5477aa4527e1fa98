use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn qtraj(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtraj"))
        .args(args)
        .current_dir(dir)
        .env_remove("QTRAJ_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.display().to_string()
}

fn two_level_config(gamma: f64, t_max: f64, n_traj: usize) -> Value {
    json!({
        "schema_version": 1,
        "model": {"name": "two_level", "parameters": {"omega": 1.0, "delta": 0.0, "gamma": gamma}},
        "t_max": t_max,
        "dt_report": 0.5,
        "n_traj": n_traj,
        "base_seed": 7,
        "initial_state": {"basis_state": 1},
        "observables": ["P_e", "sigma_x"]
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn simulate_writes_series_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &two_level_config(1.0 / 6.0, 4.0, 64));
    let out = qtraj(&["simulate", "--config", &cfg, "--output-dir", "run"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));

    let rows = csv_rows(&tmp.path().join("run/P_e.csv"));
    assert_eq!(rows[0], ["time", "mean", "stderr", "n_traj"]);
    assert_eq!(rows.len(), 1 + 9);
    assert_eq!(rows[1][0], "0.0000000000000000e0");
    assert_eq!(rows[1][1], "0.0000000000000000e0");
    assert_eq!(rows[1][2], "0.0000000000000000e0");
    assert!(rows.iter().skip(1).all(|r| r[3] == "64"));
    assert!(tmp.path().join("run/sigma_x.csv").exists());
    assert!(tmp.path().join("run/no_jump.csv").exists());

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/simulate_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"]["base_seed"], 7);
    assert_eq!(summary["aborted"], 0);
    assert_eq!(summary["config"]["n_traj"], 64);
    assert!(summary["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn single_trajectory_leaves_stderr_empty() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &two_level_config(1.0 / 6.0, 1.0, 1));
    let out = qtraj(&["simulate", "--config", &cfg, "--output-dir", "run"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("run/P_e.csv"));
    assert!(rows.iter().skip(1).all(|r| r[2].is_empty() && r[3] == "1"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "zero.json", &two_level_config(0.5, 1.0, 0));
    let out = qtraj(&["simulate", "--config", &cfg], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("n_traj"));

    let mut bad = two_level_config(0.5, 1.0, 10);
    bad["n_trajectories"] = json!(5);
    let cfg = write_config(tmp.path(), "unknown.json", &bad);
    let out = qtraj(&["simulate", "--config", &cfg], tmp.path());
    assert_eq!(code(&out), 2);
    let msg = stderr_text(&out);
    assert!(msg.contains("n_trajectories") && msg.contains("line"), "{msg}");

    let mut bad = two_level_config(0.5, 1.0, 10);
    bad["observables"] = json!(["P_x"]);
    let cfg = write_config(tmp.path(), "obs.json", &bad);
    assert_eq!(code(&qtraj(&["simulate", "--config", &cfg], tmp.path())), 2);

    let mut bad = two_level_config(0.5, 1.0, 10);
    bad["schema_version"] = json!(2);
    let cfg = write_config(tmp.path(), "version.json", &bad);
    assert_eq!(code(&qtraj(&["simulate", "--config", &cfg], tmp.path())), 2);

    let cfg = write_config(tmp.path(), "ok.json", &two_level_config(0.5, 1.0, 10));
    let out = qtraj(&["simulate", "--config", &cfg, "--scheme", "first_order"], tmp.path());
    assert_eq!(code(&out), 2, "first_order without dt");
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &two_level_config(0.5, 3.0, 100));
    for (dir, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = qtraj(&["simulate", "--config", &cfg, "--output-dir", dir, "--workers", workers], tmp.path());
        assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    }
    for file in ["P_e.csv", "sigma_x.csv", "no_jump.csv"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(file)).unwrap());
        assert_eq!(a, fs::read(tmp.path().join("c").join(file)).unwrap());
    }
}

#[test]
fn flags_override_config_fields() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &two_level_config(0.5, 1.0, 10));
    let out = qtraj(&["simulate", "--config", &cfg, "--ntraj", "12", "--seed", "99", "--output-dir", "o"], tmp.path());
    assert_eq!(code(&out), 0);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/simulate_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n_traj"], 12);
    assert_eq!(summary["seeds"]["base_seed"], 99);
}

#[test]
fn exact_without_decay_keeps_purity_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &two_level_config(0.0, 5.0, 1));
    let out = qtraj(&["exact", "--config", &cfg, "--output-dir", "ex"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("ex/exact.csv"));
    assert_eq!(rows[0], ["time", "P_e", "P_e_im", "sigma_x", "sigma_x_im", "purity"]);
    for r in &rows[1..] {
        let t: f64 = r[0].parse().unwrap();
        let pe: f64 = r[1].parse().unwrap();
        assert!((pe - (t / 2.0).sin().powi(2)).abs() < 1e-7);
        assert!((r[5].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn oversized_oracle_exits_with_code_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "model": {"name": "bose_hubbard", "parameters": {"sites": 8, "particles": 8, "n_max": 8, "j": 1.0, "u": 1.0}},
        "report_times": [1.0],
        "n_traj": 1, "base_seed": 0,
        "initial_state": {"occupation": [1, 1, 1, 1, 1, 1, 1, 1]},
        "observables": ["n_0"]
    });
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = qtraj(&["exact", "--config", &cfg], tmp.path());
    assert_eq!(code(&out), 4);
    assert!(stderr_text(&out).contains("6435"), "{}", stderr_text(&out));
}

#[test]
fn compare_passes_with_matched_model_and_fails_with_wrong_rate() {
    let tmp = TempDir::new().unwrap();
    let good = write_config(tmp.path(), "good.json", &two_level_config(1.0 / 6.0, 10.0, 500));
    let out = qtraj(&["compare", "--config", &good, "--output-dir", "cmp"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("cmp/compare_summary.json")).unwrap()).unwrap();
    assert!(summary["within_3_sigma"].as_f64().unwrap() >= 0.99, "{summary}");

    let wrong = write_config(tmp.path(), "wrong.json", &two_level_config(1.0, 10.0, 1));
    assert_eq!(code(&qtraj(&["exact", "--config", &wrong, "--output-dir", "ref"], tmp.path())), 0);
    let out = qtraj(&["compare", "--config", &good, "--exact-dir", "ref", "--output-dir", "bad"], tmp.path());
    assert_eq!(code(&out), 5, "{}", stderr_text(&out));
    assert!(stderr_text(&out).contains("standard errors"));

    let out = qtraj(&["compare", "--config", &good, "--exact-dir", "missing"], tmp.path());
    assert_ne!(code(&out), 0);
}

#[test]
fn conserved_observable_compares_exactly() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "model": {"name": "bose_hubbard", "parameters": {"sites": 3, "particles": 3, "n_max": 2, "j": 1.0, "u": 2.0,
                  "dissipator": {"kind": "dephasing", "gamma": 0.2}}},
        "report_times": [0.5, 1.0, 2.0],
        "n_traj": 50, "base_seed": 4,
        "initial_state": {"occupation": [1, 1, 1]},
        "observables": ["N", "n_0"]
    });
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = qtraj(&["compare", "--config", &cfg, "--output-dir", "o"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("o/N.csv"));
    assert!(rows.iter().skip(1).all(|r| r[1] == "3.0000000000000000e0" && r[2] == "0.0000000000000000e0"));
}

#[test]
fn gutzwiller_backend_runs_mott_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "model": {"name": "bose_hubbard", "parameters": {"sites": 4, "particles": 4, "n_max": 2, "j": 1.0, "u": 2.0,
                  "boundary": "periodic", "dissipator": {"kind": "dephasing", "gamma": 0.5}}},
        "backend": "gutzwiller", "dt": 0.01,
        "report_times": [0.5, 1.0],
        "n_traj": 20, "base_seed": 1,
        "initial_state": {"occupation": [1, 1, 1, 1]},
        "observables": ["n_0", "a_1"]
    });
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = qtraj(&["simulate", "--config", &cfg, "--output-dir", "gw"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("gw/n_0.csv"));
    assert!(rows.iter().skip(1).all(|r| r[1] == "1.0000000000000000e0"));
    assert_eq!(code(&qtraj(&["exact", "--config", &cfg], tmp.path())), 2);
}

#[test]
fn piecewise_schedule_matches_its_oracle() {
    let tmp = TempDir::new().unwrap();
    let segment = |omega: f64, until: Option<f64>| {
        json!({"until": until, "model": {"name": "two_level", "parameters": {"omega": omega, "delta": 0.0, "gamma": 0.5}}})
    };
    let mut cfg = two_level_config(0.5, 6.0, 400);
    cfg["schedule"] = json!([segment(2.0, Some(2.0)), segment(0.0, None)]);
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = qtraj(&["compare", "--config", &cfg, "--output-dir", "s"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("s/compare.csv"));
    let late: Vec<f64> = rows
        .iter()
        .skip(1)
        .filter(|r| r[0] == "P_e" && r[1].parse::<f64>().unwrap() > 2.0)
        .map(|r| r[4].parse().unwrap())
        .collect();
    assert!(late.windows(2).all(|w| w[1] < w[0]), "pure decay after the drive stops: {late:?}");
}

#[test]
fn convergence_rows_follow_inverse_square_root() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = two_level_config(1.0 / 6.0, 40.0, 1);
    cfg["convergence"] = json!({"n_grid": [1, 10, 100, 1000, 10000], "time": 40.0, "observable": "P_e"});
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let out = qtraj(&["convergence", "--config", &cfg, "--output-dir", "conv"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let rows = csv_rows(&tmp.path().join("conv/convergence.csv"));
    assert_eq!(rows[0], ["n", "mean", "stderr", "abs_error", "n_traj"]);
    assert_eq!(rows[1][0], "1");
    assert!(rows[1][2].is_empty());
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("conv/convergence_summary.json")).unwrap()).unwrap();
    let slope = summary["stderr_slope"].as_f64().unwrap();
    assert!((-0.55..=-0.45).contains(&slope), "slope {slope}");
}

#[test]
fn absolute_error_is_below_stderr_about_two_thirds_of_the_time() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = two_level_config(1.0 / 6.0, 40.0, 1);
    cfg["convergence"] = json!({"n_grid": [16, 64, 256, 1024], "time": 40.0});
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let (mut below, mut total) = (0, 0);
    for seed in 0..30 {
        let dir = format!("s{seed}");
        let out = qtraj(&["convergence", "--config", &cfg, "--seed", &seed.to_string(), "--output-dir", &dir], tmp.path());
        assert_eq!(code(&out), 0, "{}", stderr_text(&out));
        for r in csv_rows(&tmp.path().join(&dir).join("convergence.csv")).iter().skip(1) {
            let (se, err): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
            below += usize::from(err < se);
            total += 1;
        }
    }
    let frac = below as f64 / total as f64;
    assert!((0.5..=0.85).contains(&frac), "fraction {frac}");
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let tmp = TempDir::new().unwrap();
            let out = qtraj(&["simulate", "--config", path.to_str().unwrap(), "--ntraj", "4", "--output-dir", "o"], tmp.path());
            assert_eq!(code(&out), 0, "{}: {}", path.display(), stderr_text(&out));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
