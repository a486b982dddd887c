//! CLI-level acceptance: byte-identical outputs for identical configs and
//! seeds, regardless of worker count, plus exit-code contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_zvsim")
}

fn repo_data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .canonicalize()
        .expect("repo data path")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("zvsim_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) {
    let output = Command::new(binary()).args(args).output().unwrap();
    assert!(
        output.status.success(),
        "zvsim {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn criterion_10_byte_identical_output_across_thread_counts() {
    let dir = scratch("threads");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("adapt.json");
    fs::write(
        &config_path,
        format!(
            r#"{{"mode":"adapt","seed":2024,"model_path":"{}","r":400,"n_iters":8}}"#,
            model.display()
        ),
    )
    .unwrap();

    let mut traces = Vec::new();
    for threads in ["1", "2", "7"] {
        let out = dir.join(format!("out_{threads}"));
        run_ok(&[
            "adapt",
            "--config",
            config_path.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1], "1 vs 2 workers diverged");
    assert_eq!(traces[0], traces[2], "1 vs 7 workers diverged");

    // Re-running the identical invocation reproduces the bytes too.
    let out = dir.join("out_repeat");
    run_ok(&[
        "adapt",
        "--config",
        config_path.to_str().unwrap(),
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(traces[1], fs::read(out.join("trace.csv")).unwrap());
    println!("ACCEPTANCE 10 PASS: trace bytes identical across 1/2/7 workers and across reruns");
}

#[test]
fn per_replication_dump_is_reproducible() {
    let dir = scratch("simulate");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("simulate.json");
    fs::write(
        &config_path,
        format!(
            r#"{{"mode":"simulate","seed":5,"model_path":"{}","x0":1,"r":2000,"nu":[1.0,1.0]}}"#,
            model.display()
        ),
    )
    .unwrap();
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run_ok(&["simulate", "--config", config_path.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&["simulate", "--config", config_path.to_str().unwrap(), "--threads", "3", "--out", out_b.to_str().unwrap()]);
    assert_eq!(
        fs::read(out_a.join("trace.csv")).unwrap(),
        fs::read(out_b.join("trace.csv")).unwrap()
    );
}

#[test]
fn config_echo_round_trips_behaviorally() {
    let dir = scratch("roundtrip");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("adapt.json");
    fs::write(
        &config_path,
        format!(
            r#"{{"mode":"adapt","seed":77,"model_path":"{}","r":200,"n_iters":5,"clamp":[1.0,4.0]}}"#,
            model.display()
        ),
    )
    .unwrap();
    let out_a = dir.join("a");
    run_ok(&["adapt", "--config", config_path.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);

    // Extract the config echo and run it as a fresh config file.
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    let echoed = dir.join("echoed.json");
    fs::write(&echoed, serde_json::to_string(&summary["config"]).unwrap()).unwrap();
    let out_b = dir.join("b");
    run_ok(&["adapt", "--config", echoed.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(
        fs::read(out_a.join("trace.csv")).unwrap(),
        fs::read(out_b.join("trace.csv")).unwrap(),
        "config echo did not reproduce the run"
    );
}

#[test]
fn solve_reports_the_exact_values() {
    let dir = scratch("solve");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("cfg.json");
    fs::write(
        &config_path,
        format!(r#"{{"mode":"solve","seed":1,"model_path":"{}"}}"#, model.display()),
    )
    .unwrap();
    let out = dir.join("out");
    run_ok(&["solve", "--config", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["mu"], serde_json::json!([2.0, 2.0]));
    assert_eq!(summary["mode"], "solve");
    assert_eq!(summary["censored_total"], 0);
}

#[test]
fn missing_field_exits_2_and_names_the_field() {
    let dir = scratch("missing");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("bad.json");
    fs::write(
        &config_path,
        format!(
            r#"{{"mode":"adapt","seed":1,"model_path":"{}","n_iters":5}}"#,
            model.display()
        ),
    )
    .unwrap();
    let output = Command::new(binary())
        .args(["adapt", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("`r`"), "field not named: {stderr}");
}

#[test]
fn unreadable_model_exits_2_with_path() {
    let dir = scratch("unreadable");
    let config_path = dir.join("cfg.json");
    fs::write(
        &config_path,
        r#"{"mode":"solve","seed":1,"model_path":"/nonexistent/model.json"}"#,
    )
    .unwrap();
    let output = Command::new(binary())
        .args(["solve", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("/nonexistent/model.json"),
        "path not in message: {stderr}"
    );
}

#[test]
fn mode_mismatch_exits_2() {
    let dir = scratch("mismatch");
    let model = repo_data("data/models/twostate.json");
    let config_path = dir.join("cfg.json");
    fs::write(
        &config_path,
        format!(r#"{{"mode":"solve","seed":1,"model_path":"{}"}}"#, model.display()),
    )
    .unwrap();
    let output = Command::new(binary())
        .args(["adapt", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    // A model whose discounted kernel is supercritical: the solve diverges.
    let dir = scratch("diverge");
    let model_path = dir.join("model.json");
    fs::write(
        &model_path,
        r#"{
            "n_states": 2,
            "absorbing": [0],
            "P": [[1.0, 0.0], [0.1, 0.9]],
            "s": [[0.0, 0.0], [1.0, 1.0]],
            "beta": [[2.0, 2.0], [2.0, 2.0]]
        }"#,
    )
    .unwrap();
    let config_path = dir.join("cfg.json");
    fs::write(
        &config_path,
        format!(r#"{{"mode":"solve","seed":1,"model_path":"{}"}}"#, model_path.display()),
    )
    .unwrap();
    let output = Command::new(binary())
        .args(["solve", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("diverges"), "unexpected message: {stderr}");
}

#[test]
fn sweep_runs_every_config() {
    let dir = scratch("sweep");
    let model = repo_data("data/models/twostate.json");
    let solve_cfg = dir.join("solve.json");
    fs::write(
        &solve_cfg,
        format!(r#"{{"mode":"solve","seed":1,"model_path":"{}"}}"#, model.display()),
    )
    .unwrap();
    let ce_cfg = dir.join("ce.json");
    fs::write(
        &ce_cfg,
        r#"{"mode":"counterexample","seed":2,"spec":"summable","steps":2000,"n_runs":5}"#,
    )
    .unwrap();
    let sweep = dir.join("sweep.json");
    fs::write(
        &sweep,
        serde_json::to_string(&[solve_cfg.to_str().unwrap(), ce_cfg.to_str().unwrap()]).unwrap(),
    )
    .unwrap();
    let out = dir.join("out");
    run_ok(&["sweep", "--file", sweep.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(out.join("sweep_0/summary.json").exists());
    assert!(out.join("sweep_1/trace.csv").exists());
}
