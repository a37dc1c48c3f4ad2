//! End-to-end tests of the `safectl` binary: exit-code contract, artifact
//! round-trips, determinism of outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use safectl_core::noise::{GaussianModel, NoiseModel};
use safectl_core::synth_data::generate_data;
use safectl_core::synth_model::LinearSystem;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safectl"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn safectl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_csv(path: &Path, m: &DMatrix<f64>) {
    let mut text = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn reference_plant() -> LinearSystem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.2, 0.0, -0.1, 0.0, 0.0, -0.2, 0.5, 0.1, -0.1, -0.5, 1.0, 0.0, 0.1, 0.4, -0.6, 0.1,
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        3,
        &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0],
    );
    LinearSystem::new(a, b).unwrap()
}

/// Writes the four data CSVs of the reference example (seeded) and returns
/// a feasible data-driven config for it.
fn reference_config(dir: &Path) -> PathBuf {
    let sys = reference_plant();
    let noise = NoiseModel::Gaussian(GaussianModel::isotropic(4, 0.1).unwrap());
    let inputs = DMatrix::from_fn(3, 5, |r, _| [0.5, 0.3, 0.2][r]);
    let x0 = DVector::from_vec(vec![1.0, 0.1, 1.0, 1.0]);
    let d = generate_data(&sys, &x0, &inputs, &noise, 2024).unwrap();
    // files carry one time sample per line (transposed)
    write_csv(&dir.join("x0.csv"), &d.x0.transpose());
    write_csv(&dir.join("x1.csv"), &d.x1.transpose());
    write_csv(&dir.join("u0.csv"), &d.u0.transpose());
    write_csv(&dir.join("w0.csv"), &d.w0.transpose());

    // two-tier risk allocation: per-row structural minimum plus an even
    // share of the leftover budget (known feasible at 0.96 total)
    let f_rows: Vec<Vec<f64>> = vec![
        vec![0.0, 10.0, 0.0, 0.0],
        vec![0.0, -1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![-1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, -1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0, 0.0, -1.0],
    ];
    let g = [1.0, 3.0, 100.0, 100.0, 50.0, 50.0, 130.0, 130.0];
    let lambda = 0.98f64;
    let total = 0.96f64;
    let minima: Vec<f64> = f_rows
        .iter()
        .zip(g.iter())
        .map(|(row, gi)| {
            let var: f64 = row.iter().map(|v| v * v * 0.1).sum();
            1.0 / (1.0 + lambda * lambda * gi * gi / var)
        })
        .collect();
    let share = (total - minima.iter().sum::<f64>()) / 8.0;
    let alloc: Vec<f64> = minima.iter().map(|m| m + share).collect();

    let config = serde_json::json!({
        "version": 1,
        "data": {"x0": "x0.csv", "x1": "x1.csv", "u0": "u0.csv", "w0": "w0.csv"},
        "safe_set": {"f": f_rows, "g": g},
        "noise": {"type": "gaussian", "sigma": [
            [0.1, 0.0, 0.0, 0.0],
            [0.0, 0.1, 0.0, 0.0],
            [0.0, 0.0, 0.1, 0.0],
            [0.0, 0.0, 0.0, 0.1]
        ]},
        "lambda": lambda,
        "epsilon": total,
        "allocation": alloc,
        "seed": 7,
        "x0": [1.0, 0.1, 1.0, 1.0]
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn scalar_config(dir: &Path, sigma: f64, epsilon: f64) -> PathBuf {
    let config = serde_json::json!({
        "version": 1,
        "system": {"a": [[0.5]], "b": [[1.0]]},
        "safe_set": {"f": [[1.0], [-1.0]], "g": [1.0, 1.0]},
        "noise": {"type": "gaussian", "sigma": [[sigma]]},
        "lambda": 0.9,
        "epsilon": epsilon,
        "seed": 3,
        "x0": [0.5]
    });
    let path = dir.join("scalar.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn reference_data_driven_synth_simulate_verify() {
    let dir = tempfile::tempdir().unwrap();
    let config = reference_config(dir.path());
    let artifact = dir.path().join("controller.json");

    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        artifact.to_str().unwrap(),
        "--data-driven",
    ]);
    assert_eq!(code(&out), 0, "synth failed: {}", stderr(&out));
    let text = fs::read_to_string(&artifact).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(parsed["residual_eq"].as_f64().unwrap() <= 1e-6);
    assert!(parsed["residual_ineq"].as_f64().unwrap() <= 1e-6);
    assert_eq!(parsed["mode"], "gaussian");
    assert_eq!(parsed["data_driven"], true);

    // simulate 100 rollouts over 50 steps
    let simdir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--out",
        simdir.to_str().unwrap(),
        "--rollouts",
        "100",
        "--horizon",
        "50",
        "--seed",
        "42",
    ]);
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr(&out));
    let traj = fs::read_to_string(simdir.join("trajectories.csv")).unwrap();
    // 100 rollouts x 51 steps, columns rollout,t,x1..x4,violated
    assert_eq!(traj.lines().count(), 100 * 51);
    assert_eq!(traj.lines().next().unwrap().split(',').count(), 7);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(simdir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["violations_per_step"].as_array().unwrap().len(), 51);

    // byte-identical on re-run with the same seed
    let simdir2 = dir.path().join("sim2");
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--out",
        simdir2.to_str().unwrap(),
        "--rollouts",
        "100",
        "--horizon",
        "50",
        "--seed",
        "42",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(simdir.join("trajectories.csv")).unwrap(),
        fs::read(simdir2.join("trajectories.csv")).unwrap()
    );
    assert_eq!(
        fs::read(simdir.join("summary.json")).unwrap(),
        fs::read(simdir2.join("summary.json")).unwrap()
    );

    // fresh artifact verifies clean
    let out = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--rollouts",
        "5000",
    ]);
    assert_eq!(
        code(&out),
        0,
        "verify failed: {}\n{}",
        stderr(&out),
        String::from_utf8_lossy(&out.stdout)
    );

    // corrupting the gain must trip the residual checks with exit 2
    let mut corrupted: serde_json::Value = serde_json::from_str(&text).unwrap();
    corrupted["k"][0][1] = serde_json::json!(0.77);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string_pretty(&corrupted).unwrap()).unwrap();
    let out = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--controller",
        bad.to_str().unwrap(),
        "--rollouts",
        "200",
    ]);
    assert_eq!(code(&out), 2, "corrupted artifact must fail verification");
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(
        table.contains("FAIL"),
        "table should name the failed check:\n{table}"
    );
}

#[test]
fn synth_model_based_scalar_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = scalar_config(dir.path(), 0.01, 0.2);
    let artifact = dir.path().join("k.json");
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        artifact.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("margins"),
        "synth should print the margin vector"
    );
    assert!(stdout.contains("residuals"));

    let out = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--rollouts",
        "2000",
    ]);
    assert_eq!(code(&out), 0, "round-trip verify failed: {}", stderr(&out));

    // verifying against a different lambda must fail the residual match
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    cfg["lambda"] = serde_json::json!(0.8);
    let other = dir.path().join("other-lambda.json");
    fs::write(&other, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = run(&[
        "verify",
        "--config",
        other.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--rollouts",
        "200",
    ]);
    assert_eq!(code(&out), 2, "lambda mismatch must fail");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn infeasible_margins_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // sigma so large that l_i > lambda g_i on every row
    let config = scalar_config(dir.path(), 0.25, 0.2);
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("k.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "expected infeasible exit: {}", stderr(&out));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn missing_csv_exit_one_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "version": 1,
        "data": {"x0": "nope.csv", "x1": "x1.csv", "u0": "u0.csv", "w0": "w0.csv"},
        "safe_set": {"f": [[1.0]], "g": [1.0]},
        "noise": {"type": "gaussian", "sigma": [[0.1]]},
        "lambda": 0.9,
        "epsilon": 0.2
    });
    let path = dir.path().join("c.json");
    fs::write(&path, config.to_string()).unwrap();
    let out = run(&[
        "synth",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("k.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.csv"), "{}", stderr(&out));
}

#[test]
fn estimate_cov_certification() {
    let dir = tempfile::tempdir().unwrap();
    let model = GaussianModel::isotropic(2, 0.1).unwrap();
    let w23 = safectl_core::noise::sample(&model, 23, 5).unwrap();
    let w10 = safectl_core::noise::sample(&model, 10, 5).unwrap();
    write_csv(&dir.path().join("w23.csv"), &w23);
    write_csv(&dir.path().join("w10.csv"), &w10);

    let out_path = dir.path().join("est.json");
    let out = run(&[
        "estimate-cov",
        "--samples",
        dir.path().join("w23.csv").to_str().unwrap(),
        "--beta",
        "0.05",
        "--lb",
        "1.0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let est: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(est["certified"], true);
    assert_eq!(est["required_n"], 23);

    let out = run(&[
        "estimate-cov",
        "--samples",
        dir.path().join("w10.csv").to_str().unwrap(),
        "--beta",
        "0.05",
        "--lb",
        "1.0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let est: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(est["certified"], false);
    assert!(String::from_utf8_lossy(&out.stdout).contains("required"));

    // empty samples file is an input error
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = run(&[
        "estimate-cov",
        "--samples",
        dir.path().join("empty.csv").to_str().unwrap(),
        "--beta",
        "0.05",
        "--lb",
        "1.0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn risk_bound_deadbeat_and_vacuous() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "version": 1,
        "system": {"a": [[0.0]], "b": [[1.0]]},
        "safe_set": {"f": [[1.0]], "g": [1.0]},
        "noise": {"type": "gaussian", "sigma": [[0.1]]},
        "lambda": 0.98,
        "epsilon": 0.2
    });
    let path = dir.path().join("deadbeat.json");
    fs::write(&path, config.to_string()).unwrap();
    let out_path = dir.path().join("rb.json");
    let out = run(&[
        "risk-bound",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let expected = 0.1 / (6.0 * 0.98 * 0.98);
    assert!((rb["eps_bar"].as_f64().unwrap() - expected).abs() < 1e-4);
    assert_eq!(rb["vacuous"], false);

    // huge noise against a tiny set: clamped, flagged vacuous
    let config = serde_json::json!({
        "version": 1,
        "system": {"a": [[0.0]], "b": [[1.0]]},
        "safe_set": {"f": [[1.0]], "g": [0.2]},
        "noise": {"type": "gaussian", "sigma": [[50.0]]},
        "lambda": 0.9,
        "epsilon": 0.2
    });
    fs::write(&path, config.to_string()).unwrap();
    let out = run(&[
        "risk-bound",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(rb["eps_bar"].as_f64().unwrap(), 1.0);
    assert_eq!(rb["vacuous"], true);
    assert!(String::from_utf8_lossy(&out.stdout).contains("vacuous"));
}

#[test]
fn risk_bound_data_driven_reference_example() {
    let dir = tempfile::tempdir().unwrap();
    let config = reference_config(dir.path());
    let out_path = dir.path().join("rb.json");
    let out = run(&[
        "risk-bound",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--data-driven",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let eps = rb["eps_bar"].as_f64().unwrap();
    assert!(eps > 0.0 && eps <= 1.0);

    // the achieving gain strictly stabilizes the true plant
    let k_rows = rb["k"].as_array().unwrap();
    let k = DMatrix::from_fn(3, 4, |r, c| k_rows[r][c].as_f64().unwrap());
    let sys = reference_plant();
    let cl = sys.a() + sys.b() * k;
    let rho = cl
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0f64, f64::max);
    assert!(rho < 1.0, "spectral radius {rho}");
}

#[test]
fn simulate_single_rollout_zero_noise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "version": 1,
        "system": {"a": [[0.5]], "b": [[1.0]]},
        "safe_set": {"f": [[1.0], [-1.0]], "g": [1.0, 1.0]},
        "noise": {"type": "gaussian", "sigma": [[0.0]]},
        "lambda": 0.9,
        "epsilon": 0.2,
        "seed": 3,
        "x0": [0.5]
    });
    let path = dir.path().join("c.json");
    fs::write(&path, config.to_string()).unwrap();
    let artifact = dir.path().join("k.json");
    let out = run(&[
        "synth",
        "--config",
        path.to_str().unwrap(),
        "--out",
        artifact.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let simdir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--controller",
        artifact.to_str().unwrap(),
        "--out",
        simdir.to_str().unwrap(),
        "--rollouts",
        "1",
        "--horizon",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let traj = fs::read_to_string(simdir.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 11, "one rollout, horizon 10");
    // zero noise: the state decays monotonically from x0
    let first: Vec<&str> = traj.lines().next().unwrap().split(',').collect();
    assert_eq!(first[2].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn synth_idempotent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = scalar_config(dir.path(), 0.01, 0.2);
    let a1 = dir.path().join("a1.json");
    let a2 = dir.path().join("a2.json");
    for a in [&a1, &a2] {
        let out = run(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            a.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(&a1).unwrap(), fs::read(&a2).unwrap());
}

#[test]
fn mode_override_cvar_from_dr_samples() {
    let dir = tempfile::tempdir().unwrap();
    let model = GaussianModel::isotropic(1, 0.0004).unwrap();
    let w = safectl_core::noise::sample(&model, 40, 9).unwrap();
    write_csv(&dir.path().join("w.csv"), &w);
    let config = serde_json::json!({
        "version": 1,
        "system": {"a": [[0.5]], "b": [[1.0]]},
        "safe_set": {"f": [[1.0]], "g": [1.0]},
        "noise": {"type": "dr-gaussian", "samples_path": "w.csv", "beta": 0.05, "lb": 0.1},
        "lambda": 0.9,
        "epsilon": 0.2,
        "seed": 1
    });
    let path = dir.path().join("dr.json");
    fs::write(&path, config.to_string()).unwrap();

    // default mode: dr-gaussian
    let a = dir.path().join("a.json");
    let out = run(&[
        "synth",
        "--config",
        path.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let art: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(art["mode"], "dr-gaussian");
    assert!(art["confidence"].as_f64().unwrap() > 0.94);

    // the same samples double as CVaR scenarios under --mode cvar
    let out = run(&[
        "synth",
        "--config",
        path.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--mode",
        "cvar",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let art: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(art["mode"], "cvar");
    assert!(art["eta"].is_array());

    // the scenario-program artifact verifies on its halfspace set, where
    // probes come from the facet-projection fallback
    let out = run(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--controller",
        a.to_str().unwrap(),
        "--rollouts",
        "2000",
    ]);
    assert_eq!(
        code(&out),
        0,
        "cvar verify failed: {}\n{}",
        stderr(&out),
        String::from_utf8_lossy(&out.stdout)
    );
}
