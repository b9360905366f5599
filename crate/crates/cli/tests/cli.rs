use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn malab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malab")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn solve_unit_disk() {
    let doc = json(&malab(&["solve", "--domain", "disk", "--f", "1", "--grid", "129"]));
    assert_eq!(doc["kind"], "solve");
    assert_eq!(doc["schema"], 1);
    let min = doc["data"]["report"]["min_value"].as_f64().unwrap();
    assert!((min + 0.5).abs() < 1e-3, "{min}");
}

#[test]
fn unknown_identifier_reports_its_position() {
    let out = malab(&["solve", "--f", "1+zz", "--grid", "65"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("position 3") && err.contains("zz"), "{err}");
}

#[test]
fn precondition_and_numeric_failures_have_distinct_codes() {
    assert_eq!(code(&malab(&["solve", "--f", "x", "--grid", "65"])), 2);
    assert_eq!(code(&malab(&["solve", "--grid", "33"])), 2);
    assert_eq!(code(&malab(&["mollify", "--f", "step:0.3", "--i", "4"])), 2);
    assert_eq!(code(&malab(&["verify", "--criterion", "10"])), 2);
    assert_eq!(code(&malab(&["section", "--height", "5", "--grid", "65"])), 3);
    assert_eq!(code(&malab(&["chain", "--x", "0.999,0", "--grid", "65"])), 3);
}

#[test]
fn chain_reports_compounds() {
    let doc = json(&malab(&["chain", "--x", "0,0", "--rho", "0.4", "--f", "1+0.05*x", "--grid", "65", "--k-max", "3"]));
    let data = &doc["data"];
    // 1 + 0.05x dips to 0.95 on the unit disk; f_min is sampled
    let scale = data["f_scale"].as_f64().unwrap();
    assert!(scale <= 1.0 / 0.95 + 1e-12 && scale > 1.0 / 0.9501, "{scale}");
    let steps = data["chain"]["steps"].as_array().unwrap();
    assert!(!steps.is_empty());
    let m: Vec<f64> = steps.iter().map(|s| s["m"].as_f64().unwrap()).collect();
    assert_eq!(m[0], 1.0);
    assert!(m.windows(2).all(|w| w[1] >= w[0]), "{m:?}");
    assert_eq!(data["compounds"].as_array().unwrap().len(), steps.len() + 2);
}

#[test]
fn powerlaw_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = malab(&["powerlaw", "--alpha", "0.5", "--H", "1,2,4,8,16,32", "--grid", "65", "--format", "csv", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("H,omega_rho,c0,seminorm"));
    assert_eq!(std::fs::read_to_string(Path::new(d).join("powerlaw.csv")).unwrap(), csv);
    assert!(std::fs::read_to_string(Path::new(d).join("powerlaw.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn constants_file_is_embedded_in_bound_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"c_mc": 0.02, "c_bar": 3.0}"#).unwrap();
    let doc = json(&malab(&["bounds", "--family", "holder:1,0.5", "--d-bar", "1e-6", "--constants", path.to_str().unwrap()]));
    let c = &doc["data"]["constants"];
    assert_eq!(c["c_mc"], 0.02);
    assert_eq!(c["c_bar"], 3.0);
    assert_eq!(c["theta"], 0.7);
    // ω(q_in) = √q_in stays under the larger C_mc, and q_in grows past the default one
    let q_in = doc["data"]["q_in"].as_f64().unwrap();
    assert!(q_in.sqrt() <= 0.02 * (1.0 + 1e-9) && q_in > 1e-4, "{q_in}");

    std::fs::write(&path, r#"{"h_c": 0.5}"#).unwrap();
    assert_eq!(code(&malab(&["bounds", "--constants", path.to_str().unwrap()])), 2);
}

#[test]
fn modulus_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("omega.csv");
    let rows: String = (0..40).map(|k| 10f64.powf(-8.0 + 0.2 * k as f64)).map(|q| format!("{q},{}\n", 0.5 * q)).collect();
    std::fs::write(&path, format!("q,omega\n{rows}")).unwrap();
    let doc = json(&malab(&["bounds", "--modulus", path.to_str().unwrap(), "--d-bar", "1e-6"]));
    assert!(doc["data"]["e_0"].as_f64().unwrap().is_finite());
}

#[test]
fn mollify_pipeline_and_determinism() {
    let args = ["mollify", "--f", "step:0.008", "--i", "8,16,32", "--gamma", "0.5", "--grid", "65", "--seed", "3"];
    let a = malab(&args);
    let doc = json(&a);
    assert_eq!(doc["seed"], 3);
    let rows = doc["data"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["mollify"]["cond1_ok"] == true && r["mollify"]["cond2_ok"] == true));
    assert_eq!(doc["data"]["cauchy_ok"], true);
    assert_eq!(a.stdout, malab(&args).stdout);
}

#[test]
fn verify_runs_selected_criteria() {
    let out = malab(&["verify", "--criterion", "6", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("criterion 6 [PASS]"));
    assert!(String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().starts_with("6,true,"));
}
