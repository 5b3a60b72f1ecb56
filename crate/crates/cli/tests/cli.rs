use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resunit"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap_or("null")).unwrap_or(Value::Null)
}

fn code(args: &[&str]) -> (i32, Value) {
    let out = run(args);
    let err = String::from_utf8(out.stderr).unwrap();
    let json = err
        .lines()
        .rev()
        .find_map(|l| serde_json::from_str::<Value>(l).ok())
        .unwrap_or(Value::Null);
    (out.status.code().unwrap(), json)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_header_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "generate",
            "--d",
            "4",
            "--m",
            "4",
            "--n",
            "200",
            "--seed",
            "1",
            "--out",
            s(out),
        ]);
    }
    let csv = fs::read_to_string(a.join("samples.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(
        header.starts_with("# d=4,m=4,n=200,sigma=0,seed="),
        "{header}"
    );
    assert_eq!(csv.lines().count(), 201);
    assert_eq!(csv, fs::read_to_string(b.join("samples.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("teacher.json")).unwrap(),
        fs::read(b.join("teacher.json")).unwrap()
    );
    let t = read_json(&a.join("teacher.json"));
    assert_eq!(t["config"]["d"], 4);
    assert_eq!(t["config"]["seed"], 1);
}

#[test]
fn noise_is_recorded_and_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = (dir.path().join("c"), dir.path().join("n"));
    ok(&[
        "generate",
        "--d",
        "3",
        "--n",
        "50",
        "--seed",
        "4",
        "--out",
        s(&clean),
    ]);
    ok(&[
        "generate",
        "--d",
        "3",
        "--n",
        "50",
        "--seed",
        "4",
        "--noise-sigma",
        "0.1",
        "--out",
        s(&noisy),
    ]);
    let c = fs::read_to_string(clean.join("samples.csv")).unwrap();
    let n = fs::read_to_string(noisy.join("samples.csv")).unwrap();
    assert!(n.lines().next().unwrap().contains("sigma=0.1"));
    assert_ne!(c.lines().nth(1), n.lines().nth(1));
    // Same teacher either way.
    assert_eq!(
        read_json(&clean.join("teacher.json"))["unit"],
        read_json(&noisy.join("teacher.json"))["unit"]
    );
}

#[test]
fn learn_lp_recovers_a_noiseless_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "generate",
        "--d",
        "2",
        "--n",
        "200",
        "--seed",
        "3",
        "--out",
        s(&g),
    ]);
    let l = dir.path().join("l");
    let summary = ok(&[
        "learn",
        "--data",
        s(&g.join("samples.csv")),
        "--teacher",
        s(&g.join("teacher.json")),
        "--method",
        "lp",
        "--out",
        s(&l),
    ]);
    assert!(summary["output_rel"].as_f64().unwrap() <= 1e-2);
    let report = read_json(&l.join("report.json"));
    assert!(report["output_rel"].as_f64().unwrap() <= 1e-2);
    assert_eq!(report["method"], "lp");
    assert_eq!(report["n"], 200);
    let est = read_json(&l.join("estimate.json"));
    assert_eq!(est["config"]["method"], "lp");
    assert_eq!(est["a_hat"].as_array().unwrap().len(), 2);
}

#[test]
fn learn_slack_lp_reports_positive_slack_on_noisy_data() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "generate",
        "--d",
        "3",
        "--n",
        "150",
        "--seed",
        "5",
        "--noise-sigma",
        "0.1",
        "--out",
        s(&g),
    ]);
    let l = dir.path().join("l");
    let summary = ok(&[
        "learn",
        "--data",
        s(&g.join("samples.csv")),
        "--method",
        "slack-lp",
        "--out",
        s(&l),
    ]);
    assert!(summary["slack_objective"].as_f64().unwrap() > 0.0);
    assert!(
        read_json(&l.join("estimate.json"))["slack_objective"]
            .as_f64()
            .unwrap()
            > 0.0
    );
    assert!(!l.join("report.json").exists());
}

#[test]
fn learn_sgd_writes_a_loss_trace() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "generate",
        "--d",
        "2",
        "--n",
        "64",
        "--seed",
        "6",
        "--out",
        s(&g),
    ]);
    let l = dir.path().join("l");
    ok(&[
        "learn",
        "--data",
        s(&g.join("samples.csv")),
        "--method",
        "sgd",
        "--epochs",
        "3",
        "--out",
        s(&l),
    ]);
    let trace = fs::read_to_string(l.join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,mean_loss,eta\n"));
    assert_eq!(trace.lines().count(), 5);
    assert_eq!(
        read_json(&l.join("estimate.json"))["config"]["sgd"]["epochs"],
        3
    );
}

#[test]
fn missing_dataset_is_an_io_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (c, err) = code(&[
        "learn",
        "--data",
        s(&dir.path().join("none.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 3);
    assert_eq!(err["error"]["kind"], "io");
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"d\": \"four\"}").unwrap();
    let out = dir.path().join("o");
    let (c, err) = code(&["generate", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert_eq!(err["error"]["kind"], "config");
    let (c, _) = code(&["generate", "--d", "1", "--out", s(&out)]);
    assert_eq!(c, 2);
    let (c, _) = code(&["learn", "--out", s(&out)]);
    assert_eq!(c, 2);
    let (c, _) = code(&["learn", "--method", "nope", "--out", s(&out)]);
    assert_eq!(c, 2);
    let (c, _) = code(&["experiment", "heatmap", "--m", "5", "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(!out.exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"d": 3, "n": 40, "seed": 9}"#).unwrap();
    let out = dir.path().join("g");
    ok(&[
        "generate",
        "--config",
        s(&cfg),
        "--n",
        "25",
        "--out",
        s(&out),
    ]);
    let t = read_json(&out.join("teacher.json"));
    assert_eq!(t["config"]["d"], 3);
    assert_eq!(t["config"]["n"], 25);
    assert_eq!(t["config"]["m"], 3);
}

#[test]
fn solver_and_evaluation_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "generate",
        "--d",
        "4",
        "--n",
        "3",
        "--seed",
        "2",
        "--out",
        s(&g),
    ]);
    let out = dir.path().join("o");
    let (c, err) = code(&[
        "learn",
        "--data",
        s(&g.join("samples.csv")),
        "--method",
        "lp",
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 4, "{err}");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("underdetermined"));
    let (c, err) = code(&[
        "learn",
        "--data",
        s(&g.join("samples.csv")),
        "--method",
        "vanilla-lr",
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 5, "{err}");
    assert!(!out.exists());
}

#[test]
fn experiment_writes_tables_and_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let args = [
        "experiment",
        "vanilla_lr_rates",
        "--d",
        "2",
        "--n",
        "100,400",
        "--trials",
        "10",
        "--jobs",
        "1",
        "--out",
        s(&out),
    ];
    ok(&args);
    let csv = fs::read_to_string(out.join("vanilla_lr_rates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 20);
    let json = read_json(&out.join("vanilla_lr_rates.json"));
    assert_eq!(json["config"]["trials_per_cell"], 10);
    assert_eq!(json["summary"].as_array().unwrap().len(), 2);
    assert_eq!(json["cached_cells"], 0);
    let before = fs::read_to_string(out.join("vanilla_lr_rates.csv")).unwrap();
    ok(&args);
    assert_eq!(
        read_json(&out.join("vanilla_lr_rates.json"))["cached_cells"],
        2
    );
    assert_eq!(
        before,
        fs::read_to_string(out.join("vanilla_lr_rates.csv")).unwrap()
    );
}

#[test]
fn noise_robustness_has_rows_per_sigma_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    ok(&[
        "experiment",
        "noise_robustness",
        "--d",
        "3",
        "--n",
        "64",
        "--noise-sigma",
        "0,0.1",
        "--trials",
        "1",
        "--epochs",
        "2",
        "--test-size",
        "50",
        "--no-cache",
        "--out",
        s(&out),
    ]);
    let json = read_json(&out.join("noise_robustness.json"));
    let mut cells: Vec<(String, f64)> = json["summary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            (
                c["method"].as_str().unwrap().to_string(),
                c["sigma"].as_f64().unwrap(),
            )
        })
        .collect();
    cells.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expect: Vec<(String, f64)> = ["qp", "sgd", "slack-lp"]
        .iter()
        .flat_map(|m| [0.0, 0.1].map(|s| (m.to_string(), s)))
        .collect();
    assert_eq!(cells, expect);
    assert!(!out.join("cache").exists());
}

#[test]
fn weight_robustness_at_d8_orders_ours_below_sgd() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    ok(&[
        "experiment",
        "weight_robustness",
        "--d",
        "8",
        "--teachers",
        "32",
        "--test-size",
        "200",
        "--out",
        s(&out),
    ]);
    let json = read_json(&out.join("weight_robustness.json"));
    let mean = |m: &str| {
        json["summary"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["method"] == m)
            .unwrap()["output"]["mean"]
            .as_f64()
            .unwrap()
    };
    assert!(
        mean("lp") < mean("sgd"),
        "lp {} sgd {}",
        mean("lp"),
        mean("sgd")
    );
}
