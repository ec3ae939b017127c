use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn mems(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_mems")).args(args).output().unwrap();
    let doc = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), doc)
}

fn ok(args: &[&str]) -> Value {
    let (code, doc) = mems(args);
    assert_eq!(code, 0, "{args:?}");
    doc
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn state_command() {
    let doc = ok(&["state", "--mems", "0.778", "--subclass", "I"]);
    assert!((doc["measures"]["e_f"].as_f64().unwrap() - 0.69).abs() < 0.005);
    assert_eq!(doc["meta"]["command"], "state");
    assert_eq!(doc["meta"]["config"]["source"]["mems"], 0.778);
    let doc = ok(&["state", "--werner", "1"]);
    assert!((doc["measures"]["t"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let doc = ok(&["state", "--pure", "0.3", "-0.5"]);
    assert!((doc["measures"]["c"].as_f64().unwrap() - 0.6f64.sin()).abs() < 1e-9);

    let out = Command::new(env!("CARGO_BIN_EXE_mems"))
        .args(["state", "--mems", "0.9", "--subclass", "II"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("subclass II"));
}

#[test]
fn pipeline_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "pipe.json");
    let doc = ok(&["pipeline", "--target-r", "0.6667", "--subclass", "I", "--out", &out]);
    assert!(doc["fidelity"].as_f64().unwrap() >= 0.999);
    let doc = ok(&["pipeline", "--target-r", "1", "--subclass", "I"]);
    assert!((doc["fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let doc = ok(&["pipeline", "--target-r", "0.3651", "--subclass", "II", "--lc", "70"]);
    assert!(doc["fidelity"].as_f64().unwrap() >= 0.999);
    // the saved outcome can feed later commands
    let doc = ok(&["state", "--in", &out]);
    assert!((doc["measures"]["c"].as_f64().unwrap() - 0.6667).abs() < 1e-3);
}

#[test]
fn concentrate_command() {
    let dir = tempfile::tempdir().unwrap();
    let state = p(dir.path(), "m.json");
    let csv = p(dir.path(), "traj.csv");
    ok(&["state", "--mems", "0.778", "--out", &state]);

    ok(&["concentrate", "--in", &state, "--rotate", "--pieces", "2", "--mode", "ideal", "--out", &csv]);
    let rows = csv_rows(Path::new(&csv));
    assert_eq!(rows[0], ["n", "s_l", "t", "success_prob", "fidelity"]);
    assert_eq!(rows.len(), 2);
    let success: f64 = rows[1][3].parse().unwrap();
    assert!((success - 0.504).abs() < 0.002);
    assert!(Path::new(&format!("{csv}.meta.json")).exists());

    let echoed = p(dir.path(), "echo.json");
    let doc = ok(&["concentrate", "--in", &state, "--pieces", "0", "--state-out", &echoed]);
    assert_eq!(doc["rows"][0]["success_prob"], 1.0);
    let load = |path: &str| -> Vec<f64> {
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        ["re", "im"]
            .iter()
            .flat_map(|k| v[k].as_array().unwrap().clone())
            .flat_map(|row| row.as_array().unwrap().clone())
            .map(|x| x.as_f64().unwrap())
            .collect()
    };
    for (x, y) in load(&echoed).iter().zip(load(&state)) {
        assert!((x - y).abs() < 1e-12);
    }

    let m2 = p(dir.path(), "m2.json");
    ok(&["state", "--mems", "0.5", "--subclass", "II", "--out", &m2]);
    let doc = ok(&["concentrate", "--in", &m2, "--rotate", "--pieces", "32", "--trajectory"]);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 33);
    assert!(rows[32]["t"].as_f64().unwrap() < 1.0);

    let json = p(dir.path(), "traj.json");
    ok(&["concentrate", "--in", &state, "--rotate", "--pieces", "3", "--trajectory", "--json", &json]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
    assert_eq!(doc["rows"][3]["state"]["basis"], "HH,HV,VH,VV");
}

#[test]
fn compare_command() {
    let dir = tempfile::tempdir().unwrap();
    let csv = p(dir.path(), "table.csv");
    ok(&["compare", "--r", "0.778", "--pieces", "2,4,6", "--out", &csv]);
    let rows = csv_rows(Path::new(&csv));
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        labels,
        ["scheme", "twirling", "no_twirling", "procrustean_2", "procrustean_4", "procrustean_6"]
    );
    let twirl: f64 = rows[1][1].parse().unwrap();
    assert!((twirl - 0.748).abs() < 0.002);

    let json = p(dir.path(), "table.json");
    ok(&["compare", "--r", "0.778", "--json", &json]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4]["report"]["output"]["dim"], 4);
}

#[test]
fn tomography_round_trip_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let truth = p(dir.path(), "truth.json");
    let counts = p(dir.path(), "counts.csv");
    let rec = p(dir.path(), "rec.json");
    ok(&["state", "--mems", "0.6667", "--out", &truth]);
    ok(&["tomo", "simulate", "--in", &truth, "--exposure", "10000", "--seed", "3", "--out", &counts]);
    assert!(fs::read_to_string(&counts).unwrap().starts_with("label,counts,exposure\n"));
    let first = fs::read(&counts).unwrap();
    ok(&["tomo", "simulate", "--in", &truth, "--exposure", "10000", "--seed", "3", "--out", &counts]);
    assert_eq!(first, fs::read(&counts).unwrap());

    let doc = ok(&["tomo", "reconstruct", "--in", &counts, "--truth", &truth, "--out", &rec]);
    assert!(doc["fidelity_with_truth"].as_f64().unwrap() >= 0.99);
    let saved: Value = serde_json::from_str(&fs::read_to_string(&rec).unwrap()).unwrap();
    assert!(saved["metadata"]["iterations"].as_u64().is_some());
    assert!(saved["metadata"]["final_nll"].is_number());
    // the reconstruction file is itself a readable state
    ok(&["state", "--in", &rec]);

    let (code, _) = mems(&["tomo", "reconstruct", "--in", &counts, "--settings", "16"]);
    assert_eq!(code, 2, "36-setting labels are not all in the 16-setting set");
}

#[test]
fn patch_command() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.csv");
    let b = p(dir.path(), "b.csv");
    ok(&["patch", "--mems", "0.6667", "--n", "2000", "--seed", "9", "--out", &a]);
    ok(&["patch", "--mems", "0.6667", "--n", "2000", "--seed", "9", "--workers", "3", "--out", &b]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = csv_rows(Path::new(&a));
    assert_eq!(rows[0], ["s_l", "t", "f"]);
    assert_eq!(rows.len(), 2001);
    let meta: Value = serde_json::from_str(&fs::read_to_string(format!("{a}.meta.json")).unwrap()).unwrap();
    assert!(meta["sampler"]["acceptance_rate"].as_f64().unwrap() > 0.1);
    assert_eq!(meta["meta"]["seed"], 9);

    let doc = ok(&["patch", "--mems", "0.6667", "--n", "100", "--fmin", "1.0"]);
    assert!(doc["spread"]["s_l"].as_f64().unwrap() < 1e-5);
    assert!(doc["spread"]["t"].as_f64().unwrap() < 1e-5);
}

#[test]
fn curves_and_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let csv = p(dir.path(), "curves.csv");
    ok(&["curves", "--n", "200", "--out", &csv]);
    let rows = csv_rows(Path::new(&csv));
    assert_eq!(rows.len(), 601);
    assert_eq!(rows[0], ["curve", "s_l", "t"]);
    assert!(rows.iter().any(|r| r == &["MEMS_I", "0.592593", "0.444444"]));

    let json = p(dir.path(), "sens.json");
    let doc = ok(&["sensitivity", "--r0", "0.8", "--out", &json]);
    assert!((doc["fid_exponent"].as_f64().unwrap() - 2.0).abs() < 0.1);
    assert!((doc["t_exponent"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert!((doc["sl_exponent"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert!(fs::read_to_string(&json).unwrap().contains("\"version\""));
}
