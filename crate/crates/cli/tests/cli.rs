use std::path::Path;
use std::process::{Command, Output};

fn seqdetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqdetect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn list_names_every_preset() {
    let out = seqdetect(&["--list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in [
        "thm_erasure_bounded",
        "thm_erasure_unbounded",
        "thm_erasure_to_one",
        "thm_flip_bounded",
        "thm_flip_learning",
        "thm_rate_k2",
        "thm7_plateau",
        "thm8_i",
        "thm8_ii",
        "thm8_iii",
        "thm8_iv",
        "thm9_herding",
        "thm10_poly",
        "lemma1_martingale",
        "lemma3_n1",
        "lemma3_n2",
        "lemma4_div",
        "lemma4_sum",
        "prop1_sigma03",
        "prop1_sigma05",
        "prop1_full",
    ] {
        assert!(
            text.lines()
                .any(|l| l.split_whitespace().next() == Some(name)),
            "{name} missing"
        );
    }
}

#[test]
fn preset_writes_series_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = seqdetect(&[
        "--preset",
        "thm_flip_learning",
        "--nodes",
        "200",
        "--trials",
        "2000",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = read(&out_dir, "series.csv");
    assert!(csv.starts_with("# config_hash="));
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("k,pe_hat,ci_low,ci_high"));
    let verdict: serde_json::Value = serde_json::from_str(&read(&out_dir, "verdict.json")).unwrap();
    assert_eq!(verdict["passed"], true);
}

#[test]
fn unknown_preset_lists_alternatives_and_exits_two() {
    let out = seqdetect(&["--preset", "no_such"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("lemma3_n2") && err.contains("thm8_iv"),
        "{err}"
    );
}

#[test]
fn missing_source_is_a_usage_error() {
    assert_eq!(seqdetect(&[]).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<String> = ["1", "2", "2"]
        .iter()
        .enumerate()
        .map(|(i, threads)| {
            let out_dir = dir.path().join(i.to_string());
            let out = seqdetect(&[
                "--preset",
                "mc_vs_exact",
                "--trials",
                "5000",
                "--threads",
                threads,
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
            read(&out_dir, "series.csv")
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn failing_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqdetect(&[
        "--preset",
        "thm_flip_learning",
        "--nodes",
        "20",
        "--trials",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn config_exact_task_emits_exact_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"schema": 1, "task": "exact", "channel": {"kind": "flip", "params": {"q": 0.7}},
            "memory": {"family": "bounded", "C": 2}, "horizon": 25}"#,
    );
    let out_dir = dir.path().join("out");
    let out = seqdetect(&["--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&out_dir, "series.csv");
    assert_eq!(csv.lines().nth(1), Some("k,pe_exact,p0_type1,p1_type2"));
    assert_eq!(csv.lines().count(), 27);
    assert!(stdout(&out).contains("folded"));
}

#[test]
fn config_recursion_emits_bound_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"schema": 1, "channel": {"kind": "flip", "params": {"q": 0.1}}, "memory": {"family": "full"}, "horizon": 5000}"#,
    );
    let out_dir = dir.path().join("out");
    let out = seqdetect(&[
        "--config",
        &config,
        "--recursion",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        read(&out_dir, "series.csv").lines().nth(1),
        Some("k,b_k,type1_bound")
    );
}

#[test]
fn inconsistent_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"schema": 1, "task": "martingale", "channel": {"kind": "erasure", "params": {"level": 0.2}}, "memory": {"family": "full"}}"#,
    );
    let out = seqdetect(&["--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("martingale"));
}
