//! End-to-end tests of the command line binary: exit codes, record counts,
//! manifest digests, seed and thread invariance, replay, and the frozen
//! report schemas.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpflow"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("file exists")).expect("valid json")
}

fn manifest_outputs(dir: &Path) -> Value {
    read_json(&dir.join("manifest.json"))["outputs"].clone()
}

fn sorted_keys(v: &Value) -> Vec<String> {
    let mut keys: Vec<String> = v.as_object().expect("object").keys().cloned().collect();
    keys.sort();
    keys
}

const EXPANSIVE_MODEL: &str = r#"
name = "expansive"

[dynamics]
jump_rate = 1.0
moment_exponent = 1.0
metric_weight = 1.0
reference_point = [0.6]

[[flow]]
kind = "relaxation"
target = [0.0]
rate = 1.0

[jump_map]
kind = "affine"
scale_y = 1.3
dir = [0.5]
offset = [0.2]

[theta]
kind = "interval"
lo = 0.0
hi = 1.0

[jump_density]
kind = "uniform"

[switching]
kind = "constant"
rows = [[1.0]]

[noise]
kind = "uniform_ball"
eps = 0.1

[state_space]
kind = "box"
lo = [0.0]
hi = [12.0]

[constants]
flow_lipschitz = 1.0
flow_growth = -0.95
flow_gap = 1.0
jump_contraction = 0.55
switch_lipschitz = 0.5
density_lipschitz = 0.5
switch_overlap = 0.5
density_overlap = 0.5
"#;

#[test]
fn simulate_writes_one_record_per_step_plus_origin() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--gallery",
            "relaxation",
            "--steps",
            "1000",
            "--seed",
            "7",
            "--out-dir",
            "run",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let lines = fs::read_to_string(dir.path().join("run/path.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1001);

    let manifest = read_json(&dir.path().join("run/manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"][0], "simulate");
    let digest = manifest["outputs"]["path.jsonl"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(!manifest["model_hash"].as_str().unwrap().is_empty());
    // the embedded config is itself loadable
    assert!(manifest["model_config"]
        .as_str()
        .unwrap()
        .contains("jump_rate"));
}

#[test]
fn unknown_gallery_name_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["simulate", "--gallery", "nope"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "one json line expected: {err}");
    let parsed: Value = serde_json::from_str(err.trim()).expect("stderr is json");
    assert_eq!(parsed["error"], "UnknownGalleryName");
}

#[test]
fn missing_model_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["check"]);
    assert_eq!(code(&out), 2);
    let parsed: Value = serde_json::from_str(stderr(&out).trim()).expect("stderr is json");
    assert_eq!(parsed["error"], "InvalidConfig");
}

#[test]
fn malformed_state_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["couple", "--gallery", "relaxation", "--x1", "0.1", "--x2", "1@1"],
    );
    assert_eq!(code(&out), 2);
    let parsed: Value = serde_json::from_str(stderr(&out).trim()).expect("stderr is json");
    assert_eq!(parsed["error"], "InvalidConfig");
}

#[test]
fn same_seed_reproduces_digests_and_different_seed_does_not() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, seed) in [("a", "11"), ("b", "11"), ("c", "12")] {
        let out = run_in(
            dir.path(),
            &[
                "simulate",
                "--gallery",
                "two-flow-switch",
                "--steps",
                "500",
                "--seed",
                seed,
                "--out-dir",
                sub,
            ],
        );
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let a = manifest_outputs(&dir.path().join("a"));
    let b = manifest_outputs(&dir.path().join("b"));
    let c = manifest_outputs(&dir.path().join("c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn environment_variable_supplies_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let flag = run_in(
        dir.path(),
        &[
            "simulate",
            "--gallery",
            "relaxation",
            "--steps",
            "200",
            "--seed",
            "11",
            "--out-dir",
            "flag",
        ],
    );
    assert_eq!(code(&flag), 0);
    let env = bin()
        .args([
            "simulate",
            "--gallery",
            "relaxation",
            "--steps",
            "200",
            "--out-dir",
            "env",
        ])
        .env("JUMPFLOW_SEED", "11")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    assert_eq!(
        manifest_outputs(&dir.path().join("flag")),
        manifest_outputs(&dir.path().join("env"))
    );
    let manifest = read_json(&dir.path().join("env/manifest.json"));
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn replay_verifies_and_tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--gallery",
            "two-flow-switch",
            "--steps",
            "400",
            "--seed",
            "3",
            "--columnar",
            "--out-dir",
            "orig",
        ],
    );
    assert_eq!(code(&out), 0);

    let replay = run_in(
        dir.path(),
        &[
            "replay",
            "--manifest",
            "orig/manifest.json",
            "--out-dir",
            "redo",
        ],
    );
    assert_eq!(code(&replay), 0, "stderr: {}", stderr(&replay));
    assert!(stdout(&replay).contains("byte-identical"));

    // flip the recorded digest of one output; replay must notice
    let path = dir.path().join("orig/manifest.json");
    let mut manifest = read_json(&path);
    let digest = manifest["outputs"]["path.jsonl"].as_str().unwrap();
    let tampered = format!("{}{}", "00000000", &digest[8..]);
    assert_ne!(tampered, digest, "tampered digest collides");
    manifest["outputs"]["path.jsonl"] = Value::String(tampered);
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let replay = run_in(
        dir.path(),
        &[
            "replay",
            "--manifest",
            "orig/manifest.json",
            "--out-dir",
            "redo2",
        ],
    );
    assert_eq!(code(&replay), 4);
    assert!(stdout(&replay).contains("mismatch"));
}

#[test]
fn replay_uses_the_embedded_config_even_after_the_file_is_gone() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("custom.toml");
    let custom = EXPANSIVE_MODEL
        .replace("scale_y = 1.3", "scale_y = 0.5")
        .replace("\"expansive\"", "\"custom\"");
    fs::write(&model_path, custom).unwrap();

    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--model",
            "custom.toml",
            "--steps",
            "300",
            "--seed",
            "21",
            "--out-dir",
            "orig",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    fs::remove_file(&model_path).unwrap();

    let replay = run_in(
        dir.path(),
        &[
            "replay",
            "--manifest",
            "orig/manifest.json",
            "--out-dir",
            "redo",
        ],
    );
    assert_eq!(code(&replay), 0, "stderr: {}", stderr(&replay));
    assert!(stdout(&replay).contains("byte-identical"));
}

#[test]
fn check_passes_every_gallery_model() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["relaxation", "two-flow-switch", "iid-jump"] {
        let out = run_in(
            dir.path(),
            &["check", "--gallery", name, "--probes", "24", "--out-dir", name],
        );
        assert_eq!(code(&out), 0, "{name} failed: {}", stdout(&out));
        assert!(stdout(&out).contains("hold"));
    }
}

#[test]
fn check_exits_three_and_names_a_witness_on_an_expansive_jump() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), EXPANSIVE_MODEL).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "check",
            "--model",
            "bad.toml",
            "--probes",
            "32",
            "--out-dir",
            "chk",
        ],
    );
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("jump_contraction"), "witness line: {text}");
    assert!(text.contains("y1="), "witness line: {text}");

    let report = read_json(&dir.path().join("chk/conditions.json"));
    assert_eq!(report["kind"], "conditions");
    assert_eq!(report["report"]["jump_contraction"]["pass"], false);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, threads) in [("one", "1"), ("four", "4")] {
        let out = run_in(
            dir.path(),
            &[
                "lil",
                "--gallery",
                "relaxation",
                "--horizon",
                "80",
                "--replicas",
                "3",
                "--seed",
                "5",
                "--threads",
                threads,
                "--out-dir",
                sub,
            ],
        );
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let one = manifest_outputs(&dir.path().join("one"));
    let four = manifest_outputs(&dir.path().join("four"));
    assert_eq!(one["lil.json"], four["lil.json"]);
}

#[test]
fn report_schemas_are_frozen() {
    let dir = tempfile::tempdir().unwrap();

    let out = run_in(
        dir.path(),
        &["check", "--gallery", "relaxation", "--probes", "8", "--out-dir", "chk"],
    );
    assert_eq!(code(&out), 0);
    let out = run_in(
        dir.path(),
        &[
            "couple",
            "--gallery",
            "relaxation",
            "--x1",
            "0.1@1",
            "--x2",
            "8.0@1",
            "--n",
            "60",
            "--gap",
            "--gap-paths",
            "50",
            "--out-dir",
            "cpl",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let out = run_in(
        dir.path(),
        &[
            "estimate",
            "--gallery",
            "relaxation",
            "--burn-in",
            "500",
            "--keep",
            "2000",
            "--chain-len",
            "4000",
            "--batches",
            "8",
            "--passes",
            "2",
            "--out-dir",
            "est",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let out = run_in(
        dir.path(),
        &[
            "lil",
            "--gallery",
            "relaxation",
            "--horizon",
            "60",
            "--replicas",
            "2",
            "--out-dir",
            "lil",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let manifest = read_json(&dir.path().join("chk/manifest.json"));
    assert_eq!(
        sorted_keys(&manifest),
        [
            "artifact_version",
            "command",
            "model_config",
            "model_hash",
            "outputs",
            "schema",
            "seed",
            "threads",
            "wall_clock_unix"
        ]
    );

    for (file, kind) in [
        ("chk/conditions.json", "conditions"),
        ("cpl/couple.json", "couple"),
        ("est/estimate.json", "estimate"),
        ("lil/lil.json", "lil"),
    ] {
        let v = read_json(&dir.path().join(file));
        assert_eq!(sorted_keys(&v), ["kind", "report", "schema"], "{file}");
        assert_eq!(v["schema"], 1, "{file}");
        assert_eq!(v["kind"], kind, "{file}");
    }

    let conditions = read_json(&dir.path().join("chk/conditions.json"));
    assert_eq!(
        sorted_keys(&conditions["report"]),
        [
            "flow_lipschitz",
            "jump_contraction",
            "kernel_lipschitz",
            "kernel_overlap",
            "model",
            "moment_integrability",
            "probes",
            "tail_bound",
            "tol"
        ]
    );

    let couple = read_json(&dir.path().join("cpl/couple.json"));
    assert_eq!(
        sorted_keys(&couple["report"]),
        [
            "coupling_time",
            "diagnostics",
            "distance_fit",
            "final_distance",
            "hitting_time",
            "increment_gap",
            "model",
            "model_hash",
            "seed",
            "set_a",
            "set_b",
            "start_distance",
            "steps",
            "zeta_frequency"
        ]
    );

    let estimate = read_json(&dir.path().join("est/estimate.json"));
    assert_eq!(
        sorted_keys(&estimate["report"]),
        [
            "center",
            "center_se",
            "continuous_center",
            "continuous_center_se",
            "discrepancy",
            "invariant_atoms",
            "invariant_mean",
            "model",
            "model_hash",
            "observable",
            "seed",
            "sigma_bar",
            "sigma_embedded",
            "sigma_tilde"
        ]
    );

    let lil = read_json(&dir.path().join("lil/lil.json"));
    assert_eq!(
        sorted_keys(&lil["report"]),
        [
            "center",
            "checkpoints",
            "clt_ratio",
            "clt_time_variance",
            "envelope_inf_mean",
            "envelope_sup_max",
            "envelope_sup_mean",
            "envelope_sup_normalized",
            "envelope_window",
            "h_sq",
            "h_sq_slope",
            "h_sq_slope_se",
            "horizon",
            "model",
            "model_hash",
            "observable",
            "replicas",
            "seed",
            "sigma_bar",
            "sigma_embedded",
            "sigma_tilde",
            "trace",
            "z_head"
        ]
    );
}
