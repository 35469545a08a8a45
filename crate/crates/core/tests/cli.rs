//! End-to-end checks of the command-line binary: JSON outputs, exit codes,
//! and file side effects, run against the compiled executable.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> (Option<i32>, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = Command::new(env!("CARGO_BIN_EXE_tiergen"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        status.code(),
        String::from_utf8(stdout).expect("utf-8 stdout"),
        String::from_utf8(stderr).expect("utf-8 stderr"),
    )
}

fn run_json(args: &[&str]) -> Value {
    let (code, stdout, stderr) = run(args);
    assert_eq!(code, Some(0), "stderr: {stderr}");
    serde_json::from_str(&stdout).expect("stdout is JSON")
}

#[test]
fn footprint_reports_exact_byte_totals() {
    let v = run_json(&[
        "footprint", "--model", "opt-175b", "--batch", "512", "--s", "512", "--n", "32",
    ]);
    assert_eq!(v["weights_bytes"].as_u64(), Some(347_892_350_976));
    assert_eq!(v["kv_peak_bytes"].as_u64(), Some(1_314_259_992_576));
    assert_eq!(v["weights_display"].as_str(), Some("324.000 GiB"));
    assert_eq!(v["kv_display"].as_str(), Some("1.195 TiB"));
    let ratio = v["kv_to_weights_ratio"].as_f64().unwrap();
    assert!((ratio - 3.778).abs() < 0.01, "ratio {ratio}");
}

#[test]
fn footprint_splits_bytes_when_given_a_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    std::fs::write(
        &path,
        r#"{"gbs": 4, "num_gpu_batches": 1,
            "wg": 0.5, "wc": 0.5, "wd": 0.0,
            "cg": 0.0, "cc": 1.0, "cd": 0.0,
            "hg": 1.0, "hc": 0.0, "hd": 0.0}"#,
    )
    .unwrap();
    let v = run_json(&[
        "footprint", "--model", "opt-6.7b", "--batch", "4", "--s", "32", "--n", "8",
        "--policy", path.to_str().unwrap(),
    ]);
    let weights = v["weights_bytes"].as_u64().unwrap();
    let split = &v["weights_split"];
    assert_eq!(split["gpu"].as_u64(), Some(weights / 2));
    assert_eq!(split["cpu"].as_u64(), Some(weights / 2));
    assert_eq!(split["disk"].as_u64(), Some(0));
    assert_eq!(v["kv_split"]["cpu"], v["kv_peak_bytes"]);
}

#[test]
fn missing_input_file_exits_2_and_names_the_path() {
    let (code, _, stderr) = run(&[
        "footprint", "--model", "./no/such/model.json", "--batch", "1", "--s", "1", "--n", "1",
    ]);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("./no/such/model.json"), "stderr: {stderr}");
}

#[test]
fn bad_policy_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let (code, _, stderr) = run(&[
        "simulate", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "8", "--n", "2",
        "--policy", path.to_str().unwrap(),
    ]);
    assert_eq!(code, Some(2), "stderr: {stderr}");
    assert!(stderr.contains("broken.json"));
}

#[test]
fn plan_on_tiny_hardware_exits_3_with_no_feasible_policy() {
    let mut hw = tiergen::presets::hardware_preset("t4-gcp").unwrap();
    hw.gmem = 1000;
    hw.cmem = 1000;
    hw.nmem = 1000;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.json");
    std::fs::write(&path, serde_json::to_string(&hw).unwrap()).unwrap();
    let (code, _, stderr) = run(&[
        "plan", "--model", "opt-6.7b", "--hw", path.to_str().unwrap(), "--s", "32", "--n", "8",
    ]);
    assert_eq!(code, Some(3), "stderr: {stderr}");
    assert!(stderr.contains("no feasible policy"), "stderr: {stderr}");
}

#[test]
fn plan_pins_reach_the_returned_policy() {
    let v = run_json(&[
        "plan", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "64", "--n", "8",
        "--gbs", "8", "--num-gpu-batches", "2", "--pin", "wc=0.5", "--pin", "cg=1",
    ]);
    assert_eq!(v["policy"]["wc"].as_f64(), Some(0.5));
    assert_eq!(v["policy"]["cg"].as_f64(), Some(1.0));
}

#[test]
fn duplicate_or_unknown_pins_exit_2() {
    let base = [
        "plan", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "64", "--n", "8",
    ];
    let mut twice = base.to_vec();
    twice.extend(["--pin", "wc=0.5", "--pin", "wc=0.5"]);
    let (code, _, stderr) = run(&twice);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("pinned twice"), "stderr: {stderr}");

    let mut unknown = base.to_vec();
    unknown.extend(["--pin", "zz=0.5"]);
    let (code, _, stderr) = run(&unknown);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("unknown fraction"), "stderr: {stderr}");
}

#[test]
fn plan_oracle_check_brackets_the_lp() {
    let v = run_json(&[
        "plan", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "64", "--n", "8",
        "--gbs", "8,16", "--num-gpu-batches", "2", "--oracle-check", "0.25",
    ]);
    assert_eq!(v["oracle_check"]["lp_at_or_below_grid"].as_bool(), Some(true));
    let gap = v["oracle_check"]["gap_fraction"].as_f64().unwrap();
    assert!(gap >= -1e-9, "gap {gap}");
    assert!(v["plan"]["predicted_throughput"].as_f64().unwrap() > 0.0);
}

#[test]
fn pipeline_one_output_is_byte_identical_to_no_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let plan = run_json(&[
        "plan", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "64", "--n", "8",
        "--gbs", "8", "--num-gpu-batches", "2",
    ]);
    std::fs::write(&path, serde_json::to_string(&plan["policy"]).unwrap()).unwrap();
    let base = [
        "simulate", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "64", "--n", "8",
        "--policy", path.to_str().unwrap(),
    ];
    let (code_a, out_a, _) = run(&base);
    let mut with_flag = base.to_vec();
    with_flag.extend(["--pipeline", "1"]);
    let (code_b, out_b, _) = run(&with_flag);
    assert_eq!(code_a, Some(0));
    assert_eq!(code_b, Some(0));
    assert_eq!(out_a, out_b);
}

#[test]
fn simulate_writes_the_event_timeline_csv() {
    let dir = tempfile::tempdir().unwrap();
    let policy_path = dir.path().join("policy.json");
    let events_path = dir.path().join("events.csv");
    let plan = run_json(&[
        "plan", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "32", "--n", "4",
        "--gbs", "4", "--num-gpu-batches", "2",
    ]);
    std::fs::write(&policy_path, serde_json::to_string(&plan["policy"]).unwrap()).unwrap();
    let v = run_json(&[
        "simulate", "--model", "opt-6.7b", "--hw", "t4-gcp", "--s", "32", "--n", "4",
        "--policy", policy_path.to_str().unwrap(),
        "--events-csv", events_path.to_str().unwrap(),
    ]);
    assert!(v["result"].get("events").is_none(), "events stay out of stdout");
    let csv = std::fs::read_to_string(&events_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("step,kind,i,j,k,channel,start,end,bytes")
    );
    assert!(lines.count() > 0);
}

#[test]
fn baseline_comparison_reports_the_ratio() {
    let v = run_json(&[
        "simulate", "--model", "opt-175b", "--hw", "t4-gcp", "--s", "512", "--n", "32",
        "--baseline", "deepspeed", "--compare", "planned",
    ]);
    assert_eq!(v["baseline_kind"].as_str(), Some("deepspeed-like"));
    let baseline = v["baseline"]["result"]["generation_throughput"]
        .as_f64()
        .unwrap();
    let planned = v["planned"]["result"]["generation_throughput"]
        .as_f64()
        .unwrap();
    let ratio = v["throughput_ratio"].as_f64().unwrap();
    assert!((ratio - planned / baseline).abs() < 1e-12);
    assert!(ratio > 1.0, "planned should beat the baseline, got {ratio}");
}

#[test]
fn schedule_diagonal_on_one_row_matches_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let diag_csv = dir.path().join("diag.csv");
    let row_csv = dir.path().join("row.csv");
    let dims = ["--rows", "1", "--n", "3", "--l", "2", "--s", "4"];
    let mut diag = vec!["schedule", "--kind", "diagonal"];
    diag.extend(dims);
    diag.extend(["--trace-csv", diag_csv.to_str().unwrap()]);
    let mut row = vec!["schedule", "--kind", "row"];
    row.extend(dims);
    row.extend(["--trace-csv", row_csv.to_str().unwrap()]);
    let dv = run_json(&diag);
    let rv = run_json(&row);
    assert_eq!(dv["steps"], rv["steps"]);
    assert_eq!(dv["weight_load_count"], rv["weight_load_count"]);
    assert_eq!(
        std::fs::read_to_string(diag_csv).unwrap(),
        std::fs::read_to_string(row_csv).unwrap()
    );
}

#[test]
fn zigzag_account_reproduces_the_closed_forms_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("unit.json");
    std::fs::write(&model_path, r#"{"l": 1, "h1": 1, "h2": 1, "nh": 1}"#).unwrap();
    let v = run_json(&[
        "schedule", "--kind", "zigzag", "--rows", "1", "--n", "2", "--l", "1", "--s", "1",
        "--model", model_path.to_str().unwrap(), "--account",
    ]);
    // 2 (2 h1 s bls l + 2 h1 bls l (n-1)) = 8 and
    // 4 h1 bls l (s n + n(n-1)/2) = 12 at h1 = bls = l = s = 1, n = 2.
    assert_eq!(v["io"]["activation_bytes_moved"].as_u64(), Some(8));
    assert_eq!(v["io"]["kv_bytes_moved"].as_u64(), Some(12));
}

#[test]
fn schedule_budget_reports_bound_and_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("unit.json");
    std::fs::write(&model_path, r#"{"l": 2, "h1": 1, "h2": 1, "nh": 1}"#).unwrap();
    // One cache unit is 2 h1 elements = 4 bytes; --cmem 8 gives 2 units.
    let v = run_json(&[
        "schedule", "--kind", "zigzag", "--rows", "2", "--n", "2", "--l", "2", "--s", "1",
        "--model", model_path.to_str().unwrap(), "--cmem", "8", "--brute-force",
    ]);
    assert_eq!(v["budget"]["capacity_units"].as_u64(), Some(2));
    assert_eq!(v["budget"]["lower_bound_loads"].as_u64(), Some(6));
    assert_eq!(v["brute_force"]["weight_loads"].as_u64(), Some(6));
    assert_eq!(v["brute_force"]["weight_loads_per_row"].as_f64(), Some(3.0));
}

#[test]
fn schedule_flag_prerequisites_exit_2() {
    let (code, _, stderr) = run(&[
        "schedule", "--kind", "zigzag", "--rows", "1", "--n", "2", "--l", "1", "--s", "1",
        "--account",
    ]);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("--model"), "stderr: {stderr}");

    let (code, _, stderr) = run(&[
        "schedule", "--kind", "zigzag", "--rows", "1", "--n", "2", "--l", "1", "--s", "1",
        "--brute-force",
    ]);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("--cmem"), "stderr: {stderr}");
}

fn write_f16_ramp(path: &Path, count: usize) {
    let mut bytes = Vec::with_capacity(count * 2);
    for i in 0..count {
        let v = (i as f32 * 0.37).sin() * 3.0;
        bytes.extend_from_slice(&tiergen::compress::f32_to_f16_bits(v).to_le_bytes());
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn quantize_verifies_the_four_bit_bound_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.f16");
    let output = dir.path().join("out.q4");
    write_f16_ramp(&input, 5000);
    let v = run_json(&[
        "quantize", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(),
        "--bits", "4", "--group", "64", "--verify",
    ]);
    assert_eq!(v["effective_ratio"].as_f64(), Some(0.28125));
    assert_eq!(v["verify"]["bound_satisfied"].as_bool(), Some(true));
    assert_eq!(
        v["payload_bytes"].as_u64(),
        Some(std::fs::metadata(&output).unwrap().len())
    );
}

#[test]
fn quantize_sixteen_bit_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.f16");
    write_f16_ramp(&input, 512);
    let v = run_json(&[
        "quantize", "--input", input.to_str().unwrap(), "--bits", "16", "--verify",
    ]);
    assert_eq!(v["verify"]["max_abs_error"].as_f64(), Some(0.0));
    assert_eq!(v["verify"]["bound_satisfied"].as_bool(), Some(true));
}

#[test]
fn quantize_rejects_nine_bits() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.f16");
    write_f16_ramp(&input, 64);
    let (code, _, stderr) = run(&[
        "quantize", "--input", input.to_str().unwrap(), "--bits", "9",
    ]);
    assert_eq!(code, Some(2));
    assert!(stderr.contains("bits out of range"), "stderr: {stderr}");
}

#[test]
fn repeated_runs_produce_byte_identical_json() {
    let args = [
        "plan", "--model", "opt-30b", "--hw", "t4-gcp", "--s", "512", "--n", "32",
        "--gbs", "8,16", "--num-gpu-batches", "4",
    ];
    let (_, first, _) = run(&args);
    let (_, second, _) = run(&args);
    assert_eq!(first, second);
}
