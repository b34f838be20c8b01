use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn locc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = locc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).expect("schema compiles")
}

fn assert_valid(v: &Value) {
    let envelope = schema("envelope");
    let errors: Vec<String> = envelope.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "envelope: {errors:?}");
    let command = v["command"].as_str().unwrap();
    let result = schema(command);
    let errors: Vec<String> = result.iter_errors(&v["result"]).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{command}: {errors:?}");
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_INVOCATIONS: &[&[&str]] = &[
    &["validate", "--povm", "builtin:bell-states-as-povm"],
    &["weights", "--ensemble", "builtin:kkb15-products"],
    &["member", "--povm", "builtin:footnote-measurement", "--coefficients", "0.5,0.5,0.5,0.5"],
    &["hausdorff", "--povm", "builtin:bell-povm", "--other", "builtin:footnote-measurement"],
    &["hausdorff", "--povm", "builtin:kkb15-measurement", "--method", "sampled", "--samples", "64", "--seed", "3"],
    &["path-search", "--povm", "builtin:footnote-measurement", "--target", "01", "--seed", "1"],
    &["path-search", "--povm", "builtin:bell-povm", "--target", "phi+", "--restarts", "2"],
    &["isolate", "--povm", "builtin:kkb15-measurement", "--target", "psi11", "--samples", "500", "--descent-runs", "20", "--seed", "7"],
    &["simulate", "--dims", "2,3", "--rounds", "2", "--branching", "3", "--seed", "4"],
    &["simulate", "--tree", "builtin:footnote"],
    &["prop1", "--povm", "builtin:footnote-measurement", "--ensemble", "builtin:footnote-states", "--target", "1+"],
    &["ensembles"],
    &["ensembles", "--name", "kkb15"],
];

#[test]
fn every_command_matches_its_schema() {
    for args in SMALL_INVOCATIONS {
        let v = report(args);
        assert_valid(&v);
        assert_eq!(v["tool"], "locc");
        assert_eq!(v["command"], args[0]);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for args in SMALL_INVOCATIONS {
        let a = locc(args).stdout;
        let b = locc(args).stdout;
        assert_eq!(Sha256::digest(&a), Sha256::digest(&b), "{args:?}");
    }
}

#[test]
fn out_flag_writes_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let args = ["validate", "--povm", "builtin:footnote-measurement"];
    let out = locc(&[&args[..], &["--out", path.to_str().unwrap()]].concat());
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(fs::read(&path).unwrap(), locc(&args).stdout);
}

#[test]
fn timing_only_when_requested() {
    let plain = report(&["validate", "--povm", "builtin:bell-povm"]);
    assert!(plain.get("timing").is_none());
    let timed = report(&["--timing", "validate", "--povm", "builtin:bell-povm"]);
    assert!(timed["timing"]["elapsed_ms"].as_f64().unwrap() >= 0.0);
    assert_valid(&timed);
}

#[test]
fn bell_validation_residual() {
    let v = report(&["validate", "--povm", "builtin:bell-states-as-povm"]);
    assert!(v["result"]["validation"]["completeness_residual"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["result"]["validation"]["valid"], true);
}

#[test]
fn footnote_paths_all_found() {
    let v = report(&["path-search", "--povm", "builtin:footnote-measurement", "--target", "all", "--seed", "1"]);
    assert_eq!(v["result"]["paths_found"], 4);
    for t in v["result"]["targets"].as_array().unwrap() {
        assert_eq!(t["verification"]["passed"], true);
    }
}

#[test]
fn user_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let povm = write(
        &dir,
        "povm.json",
        r#"{"dims": [2, 2], "elements": [
            [[[1,0],[0,0],[0,0],[0,0]],[[0,0],[1,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0]]],
            [[[0,0],[0,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0]],[[0,0],[0,0],[1,0],[0,0]],[[0,0],[0,0],[0,0],[1,0]]]
        ], "labels": ["a0", "a1"]}"#,
    );
    let v = report(&["path-search", "--povm", &povm]);
    assert_eq!(v["result"]["paths_found"], 2);
    let op = write(&dir, "op.json", r#"[[[0.5,0],[0,0],[0,0],[0,0]],[[0,0],[0.5,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[0,0]]]"#);
    let v = report(&["member", "--povm", &povm, "--operator", &op]);
    assert_eq!(v["result"]["membership"]["feasible"], true);
    let ens = write(&dir, "ens.json", r#"{"dims": [2, 2], "states": [[[1,0],[0,0],[0,0],[0,0]], [[0,0],[0,0],[1,0],[0,0]]], "names": ["x", "y"]}"#);
    let v = report(&["prop1", "--povm", &povm, "--ensemble", &ens]);
    assert_eq!(v["result"]["partition"]["status"], "partition");
    assert_valid(&v);
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let malformed = write(&dir, "bad.json", "{\"dims\": [2, 2], \"elements\": [");
    let wrong_dim = write(
        &dir,
        "dim.json",
        r#"{"dims": [2, 2], "elements": [[[[1,0],[0,0]],[[0,0],[1,0]]]]}"#,
    );
    let incomplete = write(
        &dir,
        "inc.json",
        r#"{"dims": [1, 2], "elements": [[[[1,0],[0,0]],[[0,0],[0,0]]]]}"#,
    );
    let cases: &[(&[&str], i32)] = &[
        (&["validate"], 2),
        (&["frobnicate"], 2),
        (&["validate", "--povm", "/definitely/not/here.json"], 3),
        (&["validate", "--povm", &malformed], 4),
        (&["validate", "--povm", &wrong_dim], 5),
        (&["validate", "--povm", "builtin:no-such-fixture"], 6),
        (&["path-search", "--povm", &incomplete], 7),
        (&["path-search", "--povm", "builtin:bell-povm", "--target", "nope"], 7),
        (&["member", "--povm", "builtin:bell-povm", "--coefficients", "1,2"], 5),
        (&["weights", "--ensemble", "builtin:bell-povm"], 7),
    ];
    for (args, code) in cases {
        let out = locc(args);
        assert_eq!(out.status.code(), Some(*code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty(), "{args:?} printed a report");
    }
}

#[test]
fn obstruction_is_a_successful_run() {
    let v = report(&["path-search", "--povm", "builtin:bell-povm", "--target", "psi-", "--restarts", "1"]);
    assert_eq!(v["result"]["paths_found"], 0);
    assert_eq!(v["result"]["targets"][0]["outcome"]["status"], "obstructed");
}
