use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sgdflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdflow"))
        .args(args)
        .env("SGDFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn bundled(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_config(out: &Path) -> Value {
    json!({
        "generator": {
            "n": 30, "d": 5, "spectrum": "flat",
            "noise_model": { "additive": { "sigma_sq": 0.5 } },
            "seed": 3
        },
        "plan": {
            "dynamics": { "kind": "sde_empirical" },
            "t_end_over_mu": 5.0,
            "ensemble_size": 16,
            "seed": 9,
            "log_save_points": 12
        },
        "output_dir": out
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn malformed_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("o"));
    cfg["plan"]["ensemble_size"] = json!("many");
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = sgdflow(&["run", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("plan.ensemble_size"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("o"));
    cfg["plan"]["stepsize"] = json!(0.1);
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = sgdflow(&["run", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepsize"));
}

#[test]
fn missing_config_file_is_exit_one() {
    let out = sgdflow(&["run", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn both_horizons_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("o"));
    cfg["plan"]["t_end"] = json!(1.0);
    let path = write_config(dir.path(), "c.json", &cfg);
    assert_eq!(sgdflow(&["run", &path]).status.code(), Some(1));
}

#[test]
fn empty_analyses_writes_trajectory_only() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("nested").join("missing").join("out");
    let path = write_config(dir.path(), "c.json", &small_config(&out_dir));
    let out = sgdflow(&["run", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["plot.py", "summary.json", "trajectory.csv"]);
    let text = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(text.starts_with("t,mean_sq_dist,stderr,mean_loss\n"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["started_unix"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["analyses"], json!([]));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("a"));
    cfg["analyses"] = json!([{ "name": "localization" }, { "name": "tails" }, { "name": "quartic", "params": { "probes": 50 } }]);
    cfg["write_tensor"] = json!(true);
    let a = write_config(dir.path(), "a.json", &cfg);
    cfg["output_dir"] = json!(dir.path().join("b"));
    let b = write_config(dir.path(), "b.json", &cfg);
    assert_eq!(sgdflow(&["run", &a]).status.code(), Some(0));
    assert_eq!(sgdflow(&["run", &b]).status.code(), Some(0));
    for f in ["trajectory.csv", "localization.csv", "tails_hill.csv", "tails_moments.csv", "quartic.csv", "states.bin"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    // Timestamps only live in summary.json.
    let traj = fs::read_to_string(dir.path().join("a/trajectory.csv")).unwrap();
    assert!(!traj.contains("unix"));
}

#[test]
fn out_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &small_config(&dir.path().join("ignored")));
    let target = dir.path().join("chosen");
    let out = sgdflow(&["run", &path, "--out", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("trajectory.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_sgdflow"))
        .args(["schema"])
        .env("SGDFLOW_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn schema_is_json_and_names_the_sections() {
    let out = sgdflow(&["schema"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["generator", "schedule", "plan", "analyses"] {
        assert!(v["properties"].get(key).is_some(), "{key}");
    }
}

#[test]
fn bundled_configs_parse_under_the_schema_names() {
    let schema: Value = serde_json::from_slice(&sgdflow(&["schema"]).stdout).unwrap();
    let allowed = schema["properties"].as_object().unwrap();
    for name in ["fig1.json", "fig3.json"] {
        for key in bundled(name).as_object().unwrap().keys() {
            assert!(allowed.contains_key(key), "{name}: {key}");
        }
    }
}

#[test]
fn verify_passes_then_fails_under_a_halved_bound() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.json", &json!({ "criteria": [3, 13], "output_dir": dir.path().join("ok") }));
    let out = sgdflow(&["verify", &ok]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 2);
    let verdicts: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ok/verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts["all_passed"], json!(true));

    let tampered = write_config(
        dir.path(),
        "bad.json",
        &json!({ "criteria": [13], "bound_scale": 0.5, "output_dir": dir.path().join("bad") }),
    );
    let out = sgdflow(&["verify", &tampered]);
    assert_eq!(out.status.code(), Some(2));
    let verdicts: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bad/verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts["criteria"][0]["passed"], json!(false));
}

#[test]
fn verify_unknown_criterion_is_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", &json!({ "criteria": [99], "output_dir": dir.path().join("v") }));
    assert_eq!(sgdflow(&["verify", &cfg]).status.code(), Some(1));
}

#[test]
fn fig1_runs_without_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/fig1.json");
    let out_dir = dir.path().join("fig1");
    let out = sgdflow(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out_dir.join("nonparametric.csv"));
    assert!(rows.iter().all(|r| r[1] <= r[3] + 3.0 * r[2]));
    // Mean squared distance falls by many orders of magnitude.
    assert!(rows.last().unwrap()[1] < 1e-6 * rows[0][1]);
}

#[test]
fn fig3_curves_have_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled("fig3.json");
    cfg["plan"]["ensemble_size"] = json!(48);
    let out_dir = dir.path().join("fig3");
    cfg["output_dir"] = json!(out_dir);
    let path = write_config(dir.path(), "fig3.json", &cfg);
    let out = sgdflow(&["run", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let traj = csv_rows(&out_dir.join("trajectory.csv"));
    let n = traj.len();
    let (mid, last) = (&traj[3 * n / 4], &traj[n - 1]);
    // Constant step: the iterate plateaus at a nonzero level.
    assert!(last[1] > 0.01 && (last[1] / mid[1] - 1.0).abs() < 0.3, "{mid:?} {last:?}");
    // Its running average keeps decreasing.
    assert!(last[4] < 0.7 * traj[n / 2][4]);
    // Decaying steps keep decreasing too.
    let decay = csv_rows(&out_dir.join("decay.csv"));
    let (a, b) = (&decay[decay.len() / 2], decay.last().unwrap());
    assert!(b[1] < 0.5 * a[1], "{a:?} {b:?}");
}
