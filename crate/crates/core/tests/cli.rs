use std::fs;
use std::path::Path;
use std::process::Command;

fn pdg(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pdg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("pdg runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn unregularized_run_is_single_stage_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "c.json", r#"{"delta": 0.0, "sampling_count": 12, "nn_epochs": 3}"#);
    for out in ["a", "b"] {
        assert_eq!(pdg(d, &["--config", "c.json", "--out", out, "nominal"]).0, 0);
        assert_eq!(pdg(d, &["--config", "c.json", "--out", out, "generate", "--save-trajectories", "2"]).0, 0);
        assert_eq!(pdg(d, &["--config", "c.json", "--out", out, "train"]).0, 0);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/nominal.json")).unwrap()).unwrap();
    assert_eq!(summary["stages"].as_array().unwrap().len(), 1);
    let tf = summary["tf_delta0_s"].as_f64().unwrap();
    assert!((tf - 536.90).abs() < 0.01 * 536.90, "{tf}");
    assert_eq!(summary["tf_final_s"].as_f64().unwrap(), tf);
    assert!(!d.join("a/stages/stage_01.csv").exists());

    for f in ["nominal.json", "stages/stage_00.csv", "steering_profile.csv", "dataset.csv", "dataset.json", "model.json", "training_history.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    // every output listed by exactly one manifest
    let mut listed = Vec::new();
    for sub in ["nominal", "generate", "train"] {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(format!("a/manifest_{sub}.json"))).unwrap()).unwrap();
        assert_eq!(m["subcommand"], sub);
        listed.extend(m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()));
    }
    let n = listed.len();
    listed.sort();
    listed.dedup();
    assert_eq!(listed.len(), n);
    assert!(listed.contains(&"trajectories/traj_00001.csv".to_string()) || listed.contains(&"trajectories/traj_00000.csv".to_string()));

    let (code, _) = pdg(d, &["--config", "c.json", "--out", "a", "verify", "a/stages/stage_00.csv", "--check-initial"]);
    assert_eq!(code, 0);
}

#[test]
fn verify_flags_a_perturbed_steering_column() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "c.json", r#"{"delta": 0.0}"#);
    assert_eq!(pdg(d, &["--config", "c.json", "nominal"]).0, 0);
    let text = fs::read_to_string(d.join("out/stages/stage_00.csv")).unwrap();
    let mut lines = text.lines();
    let mut bad = String::from(lines.next().unwrap());
    bad.push('\n');
    for line in lines {
        let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
        let beta: f64 = f[9].parse().unwrap();
        f[9] = format!("{:.16e}", beta + 0.01);
        bad.push_str(&f.join(","));
        bad.push('\n');
    }
    write(d, "bad.csv", &bad);
    let (code, stdout) = pdg(d, &["--config", "c.json", "verify", "bad.csv"]);
    assert_eq!(code, 2);
    assert!(stdout.lines().any(|l| l.starts_with("max_abs_stationarity") && l.ends_with("FAIL")), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn invalid_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "unknown.json", r#"{"thrust": 1500}"#);
    write(d, "negative.json", r#"{"isp_s": -300}"#);
    write(d, "garbage.csv", "t,r\n1,2\n");
    assert_eq!(pdg(d, &["--config", "missing.json", "nominal"]).0, 3);
    assert_eq!(pdg(d, &["--config", "unknown.json", "nominal"]).0, 3);
    assert_eq!(pdg(d, &["--config", "negative.json", "nominal"]).0, 3);
    assert_eq!(pdg(d, &["verify", "garbage.csv"]).0, 3);
    assert_eq!(pdg(d, &["generate"]).0, 3);
    assert_eq!(pdg(d, &["train", "--dataset", "none.csv"]).0, 3);
    assert_eq!(pdg(d, &["--no-such-flag"]).0, 3);
}

#[test]
fn shooting_failure_exits_2_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // two Newton iterations cannot converge from the grid
    write(d, "c.json", r#"{"delta": 0.0, "shooting_max_iterations": 2}"#);
    assert_eq!(pdg(d, &["--config", "c.json", "nominal"]).0, 2);
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/nominal_failure.json")).unwrap()).unwrap();
    assert_eq!(diag["failed_delta"], 0.0);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/manifest_nominal.json")).unwrap()).unwrap();
    assert_eq!(m["outputs"][0], "nominal_failure.json");
}
