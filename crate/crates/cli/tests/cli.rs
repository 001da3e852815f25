//! End-to-end tests against the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ptdp::parallel::ScheduleKind;
use ptdp::schedule::{build_schedule, validate_timeline, Timeline};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ptdp"));
    cmd.env("PTDP_NO_COLOR", "1");
    cmd
}

fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn gpt3_model(dir: &Path) -> PathBuf {
    write_file(
        dir,
        "gpt3.json",
        r#"{"layers": 96, "hidden_size": 12288, "attention_heads": 96,
            "sequence_length": 2048, "vocab_size": 51200}"#,
    )
}

fn small_model(dir: &Path) -> PathBuf {
    write_file(
        dir,
        "small.json",
        r#"{"layers": 16, "hidden_size": 512, "attention_heads": 8,
            "sequence_length": 128, "vocab_size": 1024}"#,
    )
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn estimate_prints_the_34_day_line() {
    let dir = tempfile::tempdir().unwrap();
    let model = gpt3_model(dir.path());
    let output = bin()
        .args(["estimate", "--model"])
        .arg(&model)
        .args([
            "--batch",
            "1536",
            "--tokens",
            "300e9",
            "--ngpus",
            "1024",
            "--achieved-flops",
            "140e12",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.contains("34 days"), "missing day estimate in:\n{text}");
    assert!(text.contains("174615822336"));
}

#[test]
fn estimate_missing_model_file_exits_2_and_names_path() {
    let output = bin()
        .args(["estimate", "--model", "/no/such/model.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr).into_owned();
    assert!(err.contains("/no/such/model.json"), "stderr: {err}");
}

#[test]
fn estimate_json_carries_the_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let model = gpt3_model(dir.path());
    let output = bin()
        .args(["estimate", "--model"])
        .arg(&model)
        .args(["--batch", "1536", "--format", "json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(report["parameters"].as_u64(), Some(174_615_822_336));
    let flops = report["flops_per_iteration"].as_f64().unwrap();
    assert!((flops - 4.510_970_753_323_106e18).abs() / flops < 1e-12);
}

#[test]
fn simulate_reports_reference_bubbles_and_valid_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let out_dir = dir.path().join("sim");
    let output = bin()
        .args(["simulate", "--model"])
        .arg(&model)
        .args([
            "--p",
            "4",
            "--batch",
            "8",
            "--schedule",
            "1f1b",
            "--zero-comm",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.contains("0.375000"), "bubble missing in:\n{text}");

    // The written timeline re-validates with zero violations.
    let timeline_text = fs::read_to_string(out_dir.join("timeline.json")).unwrap();
    let timeline = Timeline::from_json(&timeline_text).unwrap();
    let schedule = build_schedule(ScheduleKind::OneFOneB, 4, 8, 1).unwrap();
    assert_eq!(validate_timeline(&timeline, &schedule), vec![]);
}

#[test]
fn simulate_interleaved_bubble_and_svg_rect_count() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let out_dir = dir.path().join("sim");
    let output = bin()
        .args(["simulate", "--model"])
        .arg(&model)
        .args([
            "--p",
            "4",
            "--batch",
            "8",
            "--schedule",
            "interleaved",
            "--v",
            "2",
            "--zero-comm",
            "--svg",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(stdout_of(&output).contains("0.187500"));
    let svg = fs::read_to_string(out_dir.join("timeline.svg")).unwrap();
    // 2 directions x 8 microbatches x 2 chunks x 4 devices.
    assert_eq!(svg.matches("class=\"task").count(), 128);
}

#[test]
fn simulate_rejects_invalid_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["simulate", "--model"])
        .arg(&model)
        .args(["--p", "3", "--batch", "6"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr).into_owned();
    assert!(err.contains("not divisible"), "stderr: {err}");
}

#[test]
fn plan_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let run = || {
        let output = bin()
            .args(["plan", "--model"])
            .arg(&model)
            .args(["--devices", "8", "--batch", "16", "--top", "5"])
            .output()
            .unwrap();
        assert!(output.status.success());
        output.stdout
    };
    assert_eq!(run(), run());
}

#[test]
fn plan_from_query_file_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let query = write_file(
        dir.path(),
        "query.json",
        r#"{
            "devices": 8,
            "global_batch": 16,
            "model": {"layers": 16, "hidden_size": 512, "attention_heads": 8,
                      "sequence_length": 128, "vocab_size": 1024},
            "microbatch_candidates": [1, 3]
        }"#,
    );
    let output = bin()
        .args(["plan", "--query"])
        .arg(&query)
        .args(["--explain", "--top", "3"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.contains("rank"));
    assert!(text.contains("infeasible candidates:"));
    assert!(text.contains("not divisible"));
}

#[test]
fn plan_with_no_feasible_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["plan", "--model"])
        .arg(&model)
        .args(["--devices", "2", "--batch", "3", "--b-candidates", "2,4"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let err = String::from_utf8_lossy(&output.stderr).into_owned();
    assert!(err.contains("no feasible configuration"), "stderr: {err}");
}

#[test]
fn plan_simulated_timing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["plan", "--model"])
        .arg(&model)
        .args(["--devices", "4", "--batch", "8", "--top", "3", "--simulate"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(stdout_of(&output).contains("simulated timing"));
}

#[test]
fn sweep_csv_marks_argmax_and_skips_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["sweep", "--model"])
        .arg(&model)
        .args([
            "--p",
            "4",
            "--batch",
            "32",
            "--sweep-b",
            "1,2,3,4,8",
            "--zero-comm",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.lines().next().unwrap().starts_with("microbatch,"));
    assert!(
        text.lines().any(|l| l.contains(",*,")),
        "no argmax marker:\n{text}"
    );
    assert!(text
        .lines()
        .any(|l| l.starts_with("3,") && l.contains("not divisible")));
}

#[test]
fn sweep_batch_throughput_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["sweep", "--model"])
        .arg(&model)
        .args([
            "--p",
            "4",
            "--batch",
            "8",
            "--sweep-batch",
            "8,16,32,64",
            "--zero-comm",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    let throughputs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(throughputs.len(), 4);
    for pair in throughputs.windows(2) {
        assert!(pair[1] >= pair[0], "throughput decreased: {throughputs:?}");
    }
    // The argmax marker sits on the highest-throughput (largest batch) row.
    assert!(
        text.lines().last().unwrap().starts_with("64,")
            && text.lines().last().unwrap().contains(",*,"),
        "argmax not on the largest batch:\n{text}"
    );
}

#[test]
fn sweep_without_candidates_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let output = bin()
        .args(["sweep", "--model"])
        .arg(&model)
        .args(["--p", "4", "--batch", "32"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn render_rebuilds_svg_from_timeline_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let out_dir = dir.path().join("sim");
    assert!(bin()
        .args(["simulate", "--model"])
        .arg(&model)
        .args(["--p", "2", "--batch", "4", "--zero-comm", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap()
        .status
        .success());
    let render_dir = dir.path().join("render");
    let output = bin()
        .args(["render", "--timeline"])
        .arg(out_dir.join("timeline.json"))
        .arg("--out")
        .arg(&render_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let svg = fs::read_to_string(render_dir.join("timeline.svg")).unwrap();
    assert_eq!(svg.matches("class=\"task").count(), 16);
}
