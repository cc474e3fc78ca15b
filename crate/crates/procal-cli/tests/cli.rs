use std::path::Path;
use std::process::Command;

fn procal() -> Command {
    Command::new(env!("CARGO_BIN_EXE_procal"))
}

fn synth(dir: &Path, kind: &str, n: usize, seed: u64) {
    let out = procal()
        .args(["synth", kind, "--n", &n.to_string(), "--seed", &seed.to_string()])
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn report_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "unbiased", 3000, 1);
    let out_path = dir.path().join("report.json");
    let out = procal()
        .arg("evaluate")
        .arg("--preds")
        .arg(dir.path().join("preds.csv"))
        .arg("--embs")
        .arg(dir.path().join("embs.bin"))
        .arg("--ref-embs")
        .arg(dir.path().join("ref_embs.bin"))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = report_json(&out_path);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["methods"][0]["name"], "conf");
    assert!(report["methods"][0]["metrics"]["piece"].is_number());
    // The per-method bin table CSV lands next to the report.
    let table = report["bin_tables"]["conf"].as_str().unwrap();
    let csv = std::fs::read_to_string(table).unwrap();
    assert!(csv.starts_with("scheme,bin_lo,bin_hi,prox_lo,prox_hi,count,mean_conf,accuracy,gap"));
}

#[test]
fn calibrate_writes_model_and_both_method_blocks() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "biased", 6000, 2);
    let out_path = dir.path().join("report.json");
    let model_path = dir.path().join("model.json");
    let out = procal()
        .arg("calibrate")
        .arg("--preds")
        .arg(dir.path().join("preds.csv"))
        .arg("--embs")
        .arg(dir.path().join("embs.bin"))
        .arg("--ref-embs")
        .arg(dir.path().join("ref_embs.bin"))
        .args(["--method", "conf", "--procal", "density-ratio"])
        .arg("--model-out")
        .arg(&model_path)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = report_json(&out_path);
    assert_eq!(report["methods"][0]["name"], "conf");
    assert_eq!(report["methods"][1]["name"], "conf+density-ratio");
    let model = report_json(&model_path);
    assert_eq!(model["method"], "conf");
}

#[test]
fn bias_test_reports_group_stats() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "example1", 8000, 3);
    let out_path = dir.path().join("report.json");
    let out = procal()
        .arg("bias-test")
        .arg("--preds")
        .arg(dir.path().join("preds.csv"))
        .arg("--embs")
        .arg(dir.path().join("embs.bin"))
        .arg("--ref-embs")
        .arg(dir.path().join("ref_embs.bin"))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = report_json(&out_path);
    let bias = &report["bias"];
    assert!(bias["bias_index"].as_f64().unwrap() > 0.3);
    assert!(bias["p_value"].as_f64().unwrap() < 1e-3);
}

#[test]
fn missing_inputs_exit_with_distinct_code() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "unbiased", 1000, 4);
    // calibrate without embeddings must fail with the missing-proximity code.
    let out = procal()
        .arg("calibrate")
        .arg("--preds")
        .arg(dir.path().join("preds.csv"))
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(17));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    // Nonexistent predictions file -> io or csv-layer error code.
    let out = procal()
        .arg("evaluate")
        .arg("--preds")
        .arg(dir.path().join("nope.csv"))
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert!(matches!(out.status.code(), Some(2) | Some(3)), "{:?}", out.status.code());
}

#[test]
fn bad_flag_values_are_rejected() {
    let out = procal()
        .args(["synth", "mystery", "--n", "100"])
        .args(["--out", "/tmp/procal-cli-test-unused"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(18));
}
