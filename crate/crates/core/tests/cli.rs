use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dcsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsynth"))
        .args(args)
        .env_remove("DCSYNTH_API_KEY")
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn design_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let v = ok_json(&dcsynth(&[
            "design", "--iterations", "2", "--samples", "3", "--hours", "24", "--library-size", "8", "--seed", "3",
            "--out", path(out),
        ]));
        assert_eq!(v["method"], "Full");
    }
    for f in ["report.json", "iterations.csv", "best_scene.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn no_phy_flag_selects_the_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&dcsynth(&[
        "design", "--no-phy", "--iterations", "1", "--samples", "2", "--hours", "12", "--library-size", "5",
        "--out", path(dir.path()),
    ]));
    assert_eq!(v["method"], "ABL(w/o phy)");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "ABL(w/o phy)");
    assert!(report["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["refined"] == false));
}

#[test]
fn config_file_supplies_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iterations": 1, "samples": 2, "hours": 12, "library-size": 5, "method": "Random"}"#).unwrap();
    let v = ok_json(&dcsynth(&[
        "--config", path(&cfg), "design", "--method", "EA", "--out", path(dir.path()),
    ]));
    assert_eq!(v["method"], "EA");
    let csv = std::fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn llm_generator_without_token_is_an_auth_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsynth(&[
        "design", "--generator", "llm", "--token-env", "DCSYNTH_CLI_TEST_UNSET", "--out", path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"]["kind"], "auth");
    assert!(err["error"]["message"].as_str().unwrap().contains("DCSYNTH_CLI_TEST_UNSET"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dcsynth(&["design", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(dcsynth(&[]).status.code(), Some(2));
}

#[test]
fn simulate_the_bundled_week() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design");
    ok_json(&dcsynth(&[
        "design", "--library", &data("sample_library.json"), "--weather", &data("week_tropical.csv"),
        "--requirements", &data("requirements_small_edge.json"), "--iterations", "1", "--samples", "2",
        "--out", path(&design),
    ]));
    let sim = dir.path().join("sim");
    let v = ok_json(&dcsynth(&[
        "simulate", "--library", &data("sample_library.json"), "--weather", &data("week_tropical.csv"),
        "--scene", path(&design.join("best_scene.json")), "--out", path(&sim),
    ]));
    assert_eq!(v["steps"], 168);
    assert_eq!(v["constraints_valid"], true);
    let pue = v["mean_pue"].as_f64().unwrap();
    assert!((1.0..2.0).contains(&pue));
    let csv = std::fs::read_to_string(sim.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 169);
}

#[test]
fn simulate_rejects_unknown_models() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.txt");
    std::fs::write(
        &scene,
        r#"<topology>{"rooms": {"r": {"racks": {"NOPE": 16}, "acus": {"ACU_A": 2}}}}</topology>
<layout>{"rooms": {"r": {"rack_gap": 0.1, "padding": 0.5, "margin": 1.0, "aisle_gap": 1.5}}}</layout>"#,
    )
    .unwrap();
    let out = dcsynth(&["simulate", "--library", &data("sample_library.json"), "--scene", path(&scene)]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_scene");
}

#[test]
fn optimize_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok_json(&dcsynth(&[
        "design", "--method", "ABL(w/o phy)", "--iterations", "1", "--samples", "2", "--hours", "12",
        "--library-size", "6", "--out", path(dir.path()),
    ]));
    let v = ok_json(&dcsynth(&[
        "optimize", "--scene", path(&dir.path().join("best_scene.json")), "--hours", "12", "--library-size", "6",
        "--steps", "20", "--out", path(dir.path()),
    ]));
    assert!(v["ideal_objective"].as_f64().unwrap().is_finite());
    assert!(v["steps"].as_u64().unwrap() <= 20);
    for f in ["ideal_assets.json", "optimizer_trace.csv", "refined_scene.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn weather_and_library_commands() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("w.csv");
    let out = dcsynth(&["weather", "--synthesize", path(&csv), "--climate", "dry", "--hours", "30"]);
    assert!(out.status.success());
    let v = ok_json(&dcsynth(&["weather", "--csv", path(&csv), "--summary"]));
    assert_eq!(v["hours"], 30);

    let lib = dir.path().join("lib.json");
    assert!(dcsynth(&["gen-library", "--size", "4", "--seed", "2", "--out", path(&lib)]).status.success());
    let parsed = dcsynth::assets::load_library(&lib).unwrap();
    assert_eq!(parsed, dcsynth::assets::generate_synthetic_library(4, 2));
}

#[test]
fn benchmark_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsynth(&[
        "benchmark", "--methods", "Random,ABL(w/o reflect, phy),Full", "--scales", "small-edge", "--library-sizes",
        "6", "--seeds", "2", "--iterations", "1", "--samples", "2", "--horizon", "12", "--out", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
    assert!(rows.starts_with("method,scale,library_size,seed,best_pue,mean_gsr\n"));
    assert_eq!(rows.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("summary.csv").exists());
}
