//! Command-line behavior: determinism of written artifacts, exit codes,
//! and the machine-readable error channel.

use std::path::Path;
use std::process::Command;

fn odx(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_odx"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("odx runs")
}

fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(std::fs::read(path).expect("artifact exists"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_small_config(dir: &Path) {
    std::fs::write(
        dir.join("config.json"),
        r#"{ "generator": { "n_case": 5, "n_control": 10 }, "llm": { "backoff_ms": 1 } }"#,
    )
    .unwrap();
}

#[test]
fn synth_is_deterministic_for_a_fixed_seed() {
    let base = tempfile::tempdir().unwrap();
    let mut checksums: Vec<Vec<String>> = Vec::new();
    for run in ["a", "b"] {
        let dir = base.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        write_small_config(&dir);
        let out = odx(&["--config", "config.json", "--seed", "7", "synth"], &dir);
        assert!(out.status.success());
        let files = [
            "encounter.csv",
            "diagnosis.csv",
            "procedure.csv",
            "prescription.csv",
            "demographics.csv",
            "labels.csv",
        ];
        checksums.push(
            files
                .iter()
                .map(|f| sha256_file(&dir.join("data/train").join(f)))
                .collect(),
        );
    }
    assert_eq!(checksums[0], checksums[1]);

    // a different seed must change the data
    let dir = base.path().join("c");
    std::fs::create_dir_all(&dir).unwrap();
    write_small_config(&dir);
    assert!(
        odx(&["--config", "config.json", "--seed", "8", "synth"], &dir)
            .status
            .success()
    );
    assert_ne!(
        checksums[0][0],
        sha256_file(&dir.join("data/train/encounter.csv"))
    );
}

#[test]
fn validation_errors_exit_1_with_json_channel() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    // window outside {7, 30} without the override flag
    let out = odx(
        &[
            "--config",
            "config.json",
            "--window",
            "14",
            "--json-errors",
            "synth",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let value: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr is one JSON object");
    assert_eq!(value["error"]["kind"], "validation");
    assert!(value["error"]["message"]
        .as_str()
        .unwrap()
        .contains("window"));

    // same config with the override succeeds
    let out = odx(
        &[
            "--config",
            "config.json",
            "--window",
            "14",
            "--allow-any-window",
            "synth",
        ],
        dir.path(),
    );
    assert!(out.status.success());
}

#[test]
fn missing_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let out = odx(
        &["--config", "config.json", "cohort", "--split", "test"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no claims tables"), "stderr: {stderr}");

    let out = odx(
        &["--config", "config.json", "evaluate", "--split", "test"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thirty_day_window_flows_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    for step in [
        vec!["synth"],
        vec!["cohort", "--split", "test"],
        vec!["render", "--split", "test"],
    ] {
        let mut args = vec!["--config", "config.json", "--window", "30"];
        args.extend(step);
        let out = odx(&args, dir.path());
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let instances = std::fs::read_to_string(dir.path().join("out/test/instances.jsonl")).unwrap();
    assert_eq!(instances.lines().count(), 15);
    assert!(instances
        .lines()
        .next()
        .unwrap()
        .contains("\"window_days\":30"));
    let prompts = std::fs::read_to_string(dir.path().join("out/test/prompts.jsonl")).unwrap();
    assert!(prompts.contains("within the next 30 days"));
}

#[test]
fn evaluate_applies_the_failure_policy_to_recorded_failures() {
    // prime the pipeline, then splice a failure record into the
    // predictions and score it under both policies
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    for step in [vec!["synth"], vec!["cohort", "--split", "test"]] {
        let mut args = vec!["--config", "config.json"];
        args.extend(step);
        assert!(odx(&args, dir.path()).status.success());
    }
    let instances = std::fs::read_to_string(dir.path().join("out/test/instances.jsonl")).unwrap();
    let ids: Vec<String> = instances
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["enrol_id"].as_str().unwrap().to_string()
        })
        .collect();
    let labels: Vec<String> = instances
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["label"].as_str().unwrap().to_string()
        })
        .collect();

    // first instance fails; the rest are predicted perfectly
    let mut lines = vec![format!(
        r#"{{"instance_id":"{}","error":"transport failure for instance {}: status 500"}}"#,
        ids[0], ids[0]
    )];
    for (id, label) in ids.iter().zip(&labels).skip(1) {
        lines.push(format!(r#"{{"instance_id":"{id}","label":"{label}"}}"#));
    }
    std::fs::write(
        dir.path().join("out/test/predictions_llm.jsonl"),
        format!("{}\n", lines.join("\n")),
    )
    .unwrap();

    let out = odx(
        &[
            "--config",
            "config.json",
            "evaluate",
            "--predictor",
            "llm",
            "--split",
            "test",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1 errors (scored as negative)"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/test/report_llm.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["n_errors"], 1);
    assert_eq!(
        report["confusion"]["tp"].as_u64().unwrap()
            + report["confusion"]["fp"].as_u64().unwrap()
            + report["confusion"]["tn"].as_u64().unwrap()
            + report["confusion"]["fn"].as_u64().unwrap(),
        15
    );

    let out = odx(
        &[
            "--config",
            "config.json",
            "--failure-policy",
            "exclude",
            "evaluate",
            "--predictor",
            "llm",
            "--split",
            "test",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1 errors (excluded)"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/test/report_llm.json")).unwrap(),
    )
    .unwrap();
    // the failed instance is dropped from scoring entirely
    assert_eq!(
        report["confusion"]["tp"].as_u64().unwrap()
            + report["confusion"]["fp"].as_u64().unwrap()
            + report["confusion"]["tn"].as_u64().unwrap()
            + report["confusion"]["fn"].as_u64().unwrap(),
        14
    );
    assert_eq!(report["f1"], 1.0);
}

#[test]
fn subcommands_run_in_isolation_from_declared_inputs() {
    // a fresh process per stage, nothing shared but the files
    let dir = tempfile::tempdir().unwrap();
    write_small_config(dir.path());
    let steps: &[&[&str]] = &[
        &["synth"],
        &["cohort", "--split", "train"],
        &["cohort", "--split", "valid"],
        &["cohort", "--split", "test"],
        &["ingest", "--split", "train"],
        &["render", "--split", "test"],
        &["featurize"],
        &["export-finetune", "--split", "train"],
        &["cost", "--split", "test"],
    ];
    for step in steps {
        let mut args = vec!["--config", "config.json"];
        args.extend_from_slice(step);
        let out = odx(&args, dir.path());
        assert!(
            out.status.success(),
            "step {step:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    // wire formats are pinned: exact key sets per record
    let first_line = |path: &str| -> serde_json::Value {
        let text = std::fs::read_to_string(dir.path().join(path)).unwrap();
        serde_json::from_str(text.lines().next().unwrap()).unwrap()
    };
    let keys = |value: &serde_json::Value| -> Vec<String> {
        value.as_object().unwrap().keys().cloned().collect()
    };
    assert_eq!(
        keys(&first_line("out/test/prompts.jsonl")),
        [
            "instance_id",
            "format",
            "window_days",
            "token_estimate",
            "prompt_text"
        ]
    );
    assert_eq!(
        keys(&first_line("out/test/instances.jsonl")),
        [
            "enrol_id",
            "cutoff_date",
            "window_days",
            "label",
            "cohort",
            "history"
        ]
    );
    assert!(dir.path().join("out/test/prompts.jsonl").exists());
    assert!(dir.path().join("out/train/finetune.jsonl").exists());
    assert!(dir.path().join("out/vocabulary.json").exists());
    assert!(dir.path().join("out/run_manifest.jsonl").exists());
}
