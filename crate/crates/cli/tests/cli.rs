use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn hodgefast(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hodgefast"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A small cohort with a planted triangle and a pipeline config pointing at it.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let synth = json!({
        "n_channels": 6,
        "n_samples": 128,
        "sample_rate_hz": 128.0,
        "n_participants_per_group": 4,
        "n_epochs_per_participant": 3,
        "base_coupling": [
            {"i": 0, "j": 1, "strength": 1.0},
            {"i": 0, "j": 2, "strength": 1.0},
            {"i": 1, "j": 2, "strength": 1.0},
            {"i": 3, "j": 4, "strength": 0.8}
        ],
        "planted_effects": [{
            "target_group": "patient",
            "window_range": [0.5, 0.75],
            "structure": "triangle",
            "node_set": [0, 1, 2],
            "amplitude_delta": 2.0,
            "band_hz": [4.0, 8.0]
        }],
        "noise_sd": 0.5,
        "seed": 7,
        "participant_gain_sd": 0.2
    });
    let pipeline = json!({
        "schema_version": 1,
        "input": "cohort/manifest.json",
        "bands": [
            {"name": "Theta", "low_hz": 4.0, "high_hz": 8.0},
            {"name": "Alpha", "low_hz": 8.0, "high_hz": 12.0}
        ],
        "node_function": "instantaneous_correlation",
        "top_percent": 30.0,
        "n_windows": 4,
        "n_taps": 31,
        "output": "out"
    });
    fs::write(dir.path().join("synth.json"), synth.to_string()).unwrap();
    fs::write(dir.path().join("pipeline.json"), pipeline.to_string()).unwrap();
    assert_ok(&hodgefast(&["synth", "--config", "synth.json", "--output", "cohort"], dir.path()));
    dir
}

#[test]
fn staged_commands_reproduce_the_pipeline() {
    let dir = workspace();
    let d = dir.path();
    assert!(d.join("cohort/manifest.json").is_file());
    assert!(d.join("cohort/synth_config.json").is_file());

    let run = hodgefast(&["pipeline", "--config", "pipeline.json", "--threads", "2"], d);
    assert_ok(&run);
    assert!(stdout(&run).contains("24 cells"), "{}", stdout(&run));
    for name in ["features.csv", "results.csv", "results.json", "component_traces.csv", "report.json"] {
        assert!(d.join("out").join(name).is_file(), "missing {name}");
    }
    let status: Value = serde_json::from_str(&fs::read_to_string(d.join("out/run_status.json")).unwrap()).unwrap();
    assert_eq!(status["status"], "complete");

    let filter = hodgefast(&["filter", "--config", "pipeline.json", "--output", "staged"], d);
    assert_ok(&filter);
    assert!(stdout(&filter).starts_with("Theta: "), "{}", stdout(&filter));
    for band in ["Theta", "Alpha"] {
        for name in ["filter.csv", "mask.json", "complex.json", "b1.csv", "b2.csv"] {
            assert!(d.join("staged/bands").join(band).join(name).is_file());
        }
    }
    assert_ok(&hodgefast(&["decompose", "--config", "pipeline.json", "--output", "staged"], d));
    assert_eq!(
        fs::read(d.join("staged/features.csv")).unwrap(),
        fs::read(d.join("out/features.csv")).unwrap()
    );
    let stats = hodgefast(
        &["stats", "--features", "staged/features.csv", "--config", "pipeline.json", "--output", "staged"],
        d,
    );
    assert_ok(&stats);
    assert_eq!(
        fs::read(d.join("staged/results.csv")).unwrap(),
        fs::read(d.join("out/results.csv")).unwrap()
    );
    let header = fs::read_to_string(d.join("out/results.csv")).unwrap();
    assert!(header.starts_with(
        "freq_band,time_window_start_s,time_window_end_s,p_value,fdr_p_value,effect_size,component,rank_sum_statistic\n"
    ));
}

#[test]
fn seed_override_changes_the_cohort() {
    let dir = workspace();
    let d = dir.path();
    assert_ok(&hodgefast(&["synth", "--config", "synth.json", "--output", "again"], d));
    assert_ok(&hodgefast(&["synth", "--config", "synth.json", "--output", "other", "--seed", "8"], d));
    let epoch = |root: &str| fs::read(d.join(root).join("epochs/control-000_000.csv")).unwrap();
    assert_eq!(epoch("cohort"), epoch("again"));
    assert_ne!(epoch("cohort"), epoch("other"));
}

#[test]
fn inspect_summarises_a_mask_and_a_filter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let k3 = json!({"n_nodes": 3, "edges": [[0, 1], [0, 2], [1, 2]], "threshold_value": 0.5});
    fs::write(d.join("k3.json"), k3.to_string()).unwrap();
    let out = hodgefast(&["inspect", "--mask", "k3.json"], d);
    assert_ok(&out);
    assert_eq!(stdout(&out).trim(), "3 nodes, 3 edges, 1 triangle, β1 = 0");

    let square = json!({"n_nodes": 4, "edges": [[0, 1], [0, 3], [1, 2], [2, 3]], "threshold_value": 0.5});
    fs::write(d.join("square.json"), square.to_string()).unwrap();
    let out = hodgefast(&["inspect", "--mask", "square.json"], d);
    assert_eq!(stdout(&out).trim(), "4 nodes, 4 edges, 0 triangles, β1 = 1");

    fs::write(d.join("filter.csv"), "0,0.95,0.1\n0.95,0,0.5\n0.1,0.5,0\n").unwrap();
    let out = hodgefast(&["inspect", "--filter", "filter.csv", "--bins", "2"], d);
    assert_ok(&out);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "filter: 3 nodes, 3 pairs");
    assert!(lines[1].starts_with("[0.00, 0.50)") && lines[1].contains(" 1 "), "{text}");
    assert!(lines[2].starts_with("[0.50, 1.00]") && lines[2].contains(" 2 "), "{text}");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("typo.json"), r#"{"schema_version": 1, "input": "cohort/manifest.json", "top_precent": 5}"#).unwrap();
    let out = hodgefast(&["pipeline", "--config", "typo.json"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("top_precent"));

    fs::write(d.join("bad.json"), r#"{"schema_version": 1, "input": "cohort/manifest.json", "n_taps": 100}"#).unwrap();
    let out = hodgefast(&["filter", "--config", "bad.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");

    let out = hodgefast(&["pipeline", "--config", "pipeline.json", "--no-such-flag"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_code_one_and_name_the_stage() {
    let dir = workspace();
    let d = dir.path();
    fs::remove_file(d.join("cohort/manifest.json")).unwrap();
    let out = hodgefast(&["pipeline", "--config", "pipeline.json"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert_eq!(err["error"]["stage"], "ingest");
    let status: Value = serde_json::from_str(&fs::read_to_string(d.join("out/run_status.json")).unwrap()).unwrap();
    assert_eq!(status["status"], "failed");
}
