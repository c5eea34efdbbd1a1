use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pimsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pimsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn analyze_mult_exact_has_single_zero_bin() {
    let out = pimsim(&["analyze-mult", "--width", "8", "--mode", "exact"]);
    let doc = stdout_json(&out);
    assert_eq!(doc["stats"]["exact_cases"], 65536);
    assert_eq!(doc["stats"]["max_abs_error"], 0);
    let counts = doc["histogram"]["counts"].as_array().unwrap();
    assert_eq!(counts[0], 65536);
    assert!(counts[1..].iter().all(|c| c == 0));
}

#[test]
fn analyze_mult_writes_artifacts_with_mass_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = pimsim(&[
        "analyze-mult",
        "--width",
        "8",
        "--mode",
        "approx",
        "--bins",
        "64",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "error_bin_low,error_bin_high,count");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 64);
    let mass: u64 = rows
        .iter()
        .map(|row| row.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(mass, 65536);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["total_cases"], 65536);
}

#[test]
fn analyze_mult_rejects_width_9() {
    let out = pimsim(&["analyze-mult", "--width", "9", "--mode", "exact"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_mult_is_deterministic() {
    let run = || pimsim(&["analyze-mult", "--width", "6", "--mode", "approx"]).stdout;
    assert_eq!(run(), run());
}

#[test]
fn simulate_macro_flags_all_rows_equal() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "3,5\n255,255\n0,9\n128,1\n").unwrap();
    let out = pimsim(&[
        "simulate-macro",
        "--pairs",
        pairs.to_str().unwrap(),
        "--mode",
        "approx",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",true")), "{text}");
    assert!(rows[1].starts_with("255,255,64064,3,961"));
}

#[test]
fn simulate_macro_empty_pairs_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "").unwrap();
    let out = pimsim(&["simulate-macro", "--pairs", pairs.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "a,b,final_product,cycles_used,residual_error,matches_reference\n"
    );
}

#[test]
fn simulate_macro_corrupt_row_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "1,2\nfoo,3\n").unwrap();
    let out = pimsim(&["simulate-macro", "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn map_conv_reports_three_passes() {
    let out = pimsim(&[
        "map", "--kind", "conv", "--filter-width", "3", "--depth", "16", "--filters", "32",
        "--input-height", "8", "--input-width", "8",
    ]);
    let plan = stdout_json(&out);
    assert_eq!(plan["passes"], 3);
    assert_eq!(plan["banks_required"], 3);
}

#[test]
fn map_pruning_uses_seed() {
    let run = |seed: &str| {
        let out = pimsim(&[
            "map", "--kind", "fc", "--depth", "16", "--filters", "8", "--pruning", "0.25",
            "--seed", seed,
        ]);
        stdout_json(&out)
    };
    let a = run("7");
    let b = run("7");
    let c = run("8");
    assert_eq!(a, b);
    assert_ne!(a["mask"], c["mask"]);
    assert_eq!(a["pruned_fraction"], 0.25);
}

#[test]
fn cost_default_carries_published_peaks() {
    let out = pimsim(&["cost"]);
    let doc = stdout_json(&out);
    assert_eq!(
        doc["peak_one_cycle"]["published_throughput_ops_per_s"]["value"],
        341.0e9
    );
    assert_eq!(
        doc["selected_mode"]["published_throughput_ops_per_s"]["value"],
        85.25e9
    );
    assert_eq!(
        doc["selected_mode"]["throughput_ops_per_s"]["provenance"],
        "derived_formula"
    );
}

#[test]
fn cost_with_plan_reports_calibrated_fields() {
    let dir = tempfile::tempdir().unwrap();
    let map_out = pimsim(&[
        "map", "--kind", "conv", "--filter-width", "3", "--depth", "16", "--filters", "32",
        "--input-height", "8", "--input-width", "8", "--pruning", "0.3", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(map_out.status.success());
    let plan_path = dir.path().join("plan.json");
    let out = pimsim(&["cost", "--plan", plan_path.to_str().unwrap()]);
    let doc = stdout_json(&out);
    assert_eq!(doc["energy_eff_tops_per_w"]["value"], 87.22);
    assert_eq!(doc["energy_eff_tops_per_w"]["provenance"], "paper_calibrated");
    assert_eq!(doc["calibrated_throughput_tops"]["value"], 0.43);
    assert!(!doc["empty_workload"].as_bool().unwrap());
}

#[test]
fn cost_rejects_negative_clock() {
    let out = pimsim(&["cost", "--config", r#"{"clock_mhz":-5.0}"#]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cost_rejects_unknown_config_keys() {
    let out = pimsim(&["cost", "--config", r#"{"clock":333}"#]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infer_fixture_exact_agrees_fully() {
    let weights = fixture("mlp_16_8_4.csv");
    let inputs = fixture("mlp_inputs.csv");
    let out = pimsim(&[
        "infer",
        "--weights",
        weights.to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
        "--mode",
        "exact",
    ]);
    let doc = stdout_json(&out);
    assert_eq!(doc["report"]["top1_agreement_vs_exact_int8"], 1.0);
    assert_eq!(doc["report"]["output_mse_vs_exact_int8"], 0.0);
    assert_eq!(doc["outputs"].as_array().unwrap().len(), 8);
}

#[test]
fn infer_mode_ordering_on_fixture() {
    let weights = fixture("mlp_16_8_4.csv");
    let inputs = fixture("mlp_inputs.csv");
    let mse = |mode: &str| {
        let out = pimsim(&[
            "infer",
            "--weights",
            weights.to_str().unwrap(),
            "--inputs",
            inputs.to_str().unwrap(),
            "--mode",
            mode,
        ]);
        stdout_json(&out)["report"]["output_mse_vs_exact_int8"]
            .as_f64()
            .unwrap()
    };
    let exact = mse("exact");
    let accurate = mse("accurate");
    let approx = mse("approx");
    assert_eq!(exact, 0.0);
    assert!(accurate <= approx);
}

#[test]
fn infer_missing_weights_exits_1() {
    let inputs = fixture("mlp_inputs.csv");
    let out = pimsim(&[
        "infer",
        "--weights",
        "/nonexistent/weights.csv",
        "--inputs",
        inputs.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_env_var_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_pimsim"))
        .args(["analyze-mult", "--width", "4", "--mode", "exact"])
        .env("PIMSIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let ok = Command::new(env!("CARGO_BIN_EXE_pimsim"))
        .args(["analyze-mult", "--width", "4", "--mode", "exact"])
        .env("PIMSIM_THREADS", "1")
        .output()
        .unwrap();
    assert!(ok.status.success());
}
