//! End-to-end tests of the `sumjudge` binary: subcommands, file outputs,
//! and exit codes (0 success, 1 config, 2 backend, 3 data).

use std::path::Path;
use std::process::{Command, Output};

fn sumjudge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumjudge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_corpus(dir: &Path) -> String {
    let golds = [1.0, 2.0, 3.0, 4.0, 5.0, 2.0, 3.0, 4.0, 5.0, 1.0];
    let lines: Vec<String> = golds
        .iter()
        .enumerate()
        .map(|(i, gold)| {
            format!(
                r#"{{"id":"s{i:02}","source":"Article number {i:02} reports a sequence of events in town {i:02}.","summary":"synopsis-{i:02} of the events.","gold":{gold}}}"#
            )
        })
        .collect();
    let path = dir.join("corpus.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path.display().to_string()
}

/// Rules keyed on the source text drive evaluation scores; rules keyed on
/// the summary text drive filtering verdicts (the filtering prompt carries
/// only the summary). Sample s09 is marked redundant.
fn write_profile(dir: &Path, scale_min: i64, scale_max: i64) -> String {
    let scores = [1, 2, 3, 4, 5, 2, 3, 4, 5, 1];
    let mut rules = Vec::new();
    for (i, score) in scores.iter().enumerate() {
        let score = if scale_max == 100 { score * 20 } else { *score };
        rules.push(format!(
            r#"{{"matcher":"Article number {i:02}","distribution":{{"{score}":1.0}}}}"#
        ));
    }
    rules.push(format!(
        r#"{{"matcher":"synopsis-09","distribution":{{"{scale_min}":1.0}}}}"#
    ));
    rules.push(format!(
        r#"{{"matcher":"synopsis-","distribution":{{"{scale_max}":1.0}}}}"#
    ));
    let profile = format!(
        r#"{{"scale":{{"min":{scale_min},"max":{scale_max},"step":1}},"rules":[{}],"default":{{"{scale_min}":1.0}}}}"#,
        rules.join(",")
    );
    let path = dir.join("profile.json");
    std::fs::write(&path, profile).unwrap();
    path.display().to_string()
}

#[test]
fn evaluate_render_correlate_flow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let profile = write_profile(dir.path(), 1, 5);
    let out_dir = dir.path().join("run");

    let output = sumjudge(&[
        "evaluate",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--seed", "11",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("evaluated 10/10"), "stdout: {stdout}");
    assert!(stdout.contains("tau-b = 1.0000"), "stdout: {stdout}");
    assert!(out_dir.join("records.jsonl").exists());
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("correlation.json").exists());

    // Correlate the produced records standalone.
    let output = sumjudge(&[
        "correlate",
        "--records", out_dir.join("records.jsonl").to_str().unwrap(),
        "--corpus", &corpus,
    ]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("tau-b = 1.0000"));

    // Prompt dump for one sample.
    let output = sumjudge(&[
        "render",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--ids", "s00",
    ]);
    assert!(output.status.success());
    let dump = String::from_utf8_lossy(&output.stdout);
    assert!(dump.contains("=== sample s00 [relevance]"));
    assert!(dump.contains("=== sample s00 [fluency]"));
    assert!(dump.contains("Article number 00"));
}

#[test]
fn filter_and_bin_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let profile = write_profile(dir.path(), 0, 100);
    let out_dir = dir.path().join("run");

    let output = sumjudge(&[
        "evaluate",
        "--preset", "test-eval4nlp",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--filtering", "false",
        "--binning", "false",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let records = out_dir.join("records.jsonl");

    // Filtering marks s09 (its summary rule answers "Yes") and nothing else.
    let filtered = dir.path().join("filtered.jsonl");
    let verdicts = dir.path().join("verdicts.jsonl");
    let output = sumjudge(&[
        "filter",
        "--records", records.to_str().unwrap(),
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--out", filtered.to_str().unwrap(),
        "--verdicts-out", verdicts.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stdout).contains("filtered 1/10"));
    let filtered_text = std::fs::read_to_string(&filtered).unwrap();
    assert!(filtered_text.contains(r#""filtered":true"#));
    assert!(verdicts.exists());

    // Binning reports the unique-score reduction.
    let binned = dir.path().join("binned.jsonl");
    let output = sumjudge(&[
        "bin",
        "--records", filtered.to_str().unwrap(),
        "--out", binned.to_str().unwrap(),
        "--bin-width", "30",
        "--bin-range", "0:100",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("unique scores"), "stdout: {stdout}");
    let binned_text = std::fs::read_to_string(&binned).unwrap();
    assert!(binned_text.contains(r#""binned_score":"#));

    // Correlating on binned scores works end to end.
    let output = sumjudge(&[
        "correlate",
        "--records", binned.to_str().unwrap(),
        "--corpus", &corpus,
        "--use-binned",
    ]);
    assert!(output.status.success());
}

#[test]
fn demo_pack_and_demonstrated_run() {
    let dir = tempfile::tempdir().unwrap();
    // Train corpus with aspect annotations and one pre-authored rationale.
    let train: Vec<String> = (0..4)
        .map(|i| {
            let score = if i < 2 { 5 } else { 1 };
            format!(
                r#"{{"id":"t{i}","source":"Training article {i} about the harvest festival.","summary":"training synopsis {i}.","gold_aspects":{{"relevance":{score},"consistency":{score},"coherence":{score},"fluency":{score}}},"demo_rationales":{{"relevance":"Covers the festival facts.","consistency":"Matches the article.","coherence":"Reads as one story.","fluency":"Grammatical throughout."}}}}"#
            )
        })
        .collect();
    let train_path = dir.path().join("train.jsonl");
    std::fs::write(&train_path, train.join("\n") + "\n").unwrap();

    let pack = dir.path().join("demos.jsonl");
    let output = sumjudge(&[
        "demo-pack",
        "--corpus", train_path.to_str().unwrap(),
        "--quality", "best",
        "--kind", "reason",
        "--out", pack.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let pack_text = std::fs::read_to_string(&pack).unwrap();
    assert!(pack_text.contains(r#""quality":"best""#));
    assert!(pack_text.contains(r#""kind":"reason""#));

    let corpus = write_corpus(dir.path());
    let profile = write_profile(dir.path(), 1, 5);
    let out_dir = dir.path().join("demo-run");
    let output = sumjudge(&[
        "evaluate",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--demo-pack", pack.to_str().unwrap(),
        "--demo-quality", "best",
        "--demo-kind", "reason",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    // The demonstration block lands in the rendered prompts.
    let dump = dir.path().join("dump.txt");
    let output = sumjudge(&[
        "render",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--demo-pack", pack.to_str().unwrap(),
        "--demo-quality", "best",
        "--demo-kind", "reason",
        "--ids", "s00",
        "--out", dump.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let dump_text = std::fs::read_to_string(&dump).unwrap();
    assert!(dump_text.contains("Please refer to following example below."));
    assert!(dump_text.contains("Example Score: 5"));
}

#[test]
fn taxonomy_subcommand_renders_table() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<String> = (0..10)
        .map(|i| {
            let error_type = if i < 5 { 0 } else { 2 };
            format!(
                r#"{{"record_id":"r{i}","aspect":"relevance","error_type":{error_type},"condition":"Base"}}"#
            )
        })
        .collect();
    let path = dir.path().join("labels.jsonl");
    std::fs::write(&path, labels.join("\n") + "\n").unwrap();

    let report = dir.path().join("taxonomy.json");
    let output = sumjudge(&[
        "taxonomy",
        "--labels", path.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("Good"), "stdout: {stdout}");
    assert!(stdout.contains("50%"), "stdout: {stdout}");
    assert!(report.exists());
}

#[test]
fn grid_subcommand_compares_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let profile_path = write_profile(dir.path(), 1, 5);
    let profile: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&profile_path).unwrap()).unwrap();

    // The noisy profile answers the scale minimum everywhere (no rules).
    let noisy = serde_json::json!({
        "scale": {"min": 1, "max": 5, "step": 1},
        "rules": [],
        "default": {"3": 0.5, "4": 0.5}
    });
    let grid_spec = serde_json::json!([
        {"name": "clean", "config": {"corpus": corpus, "seed": 3, "backend": {"mock": profile}}},
        {"name": "noisy", "config": {"corpus": corpus, "seed": 3, "backend": {"mock": noisy}}},
    ]);
    let grid_path = dir.path().join("grid-spec.json");
    std::fs::write(&grid_path, serde_json::to_string_pretty(&grid_spec).unwrap()).unwrap();

    let out_dir = dir.path().join("grid");
    let output = sumjudge(&[
        "grid",
        "--configs", grid_path.to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let clean_line = stdout.lines().find(|l| l.starts_with("clean")).unwrap();
    assert!(clean_line.contains("1.0000"), "grid output: {stdout}");
    assert!(out_dir.join("grid.json").exists());
    assert!(out_dir.join("clean/records.jsonl").exists());
    assert!(out_dir.join("noisy/records.jsonl").exists());

    // Rows are tau-sorted: clean first.
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("grid.json")).unwrap()).unwrap();
    assert_eq!(table["rows"][0]["name"], "clean");
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let profile = write_profile(dir.path(), 1, 5);

    // Config error: decoding/aggregation mismatch.
    let output = sumjudge(&[
        "evaluate",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--temperature", "0.7",
        "--out-dir", dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("allow-nonstandard-decoding"));

    // Backend error: unreachable endpoint.
    let output = sumjudge(&[
        "evaluate",
        "--corpus", &corpus,
        "--endpoint", "http://127.0.0.1:9",
        "--model", "m",
        "--concurrency", "1",
        "--out-dir", dir.path().join("bad2").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    // Data error: corpus with a duplicate id.
    let dup = dir.path().join("dup.jsonl");
    std::fs::write(
        &dup,
        concat!(
            r#"{"id":"s1","source":"a","summary":"b"}"#, "\n",
            r#"{"id":"s1","source":"c","summary":"d"}"#, "\n",
        ),
    )
    .unwrap();
    let output = sumjudge(&[
        "evaluate",
        "--corpus", dup.to_str().unwrap(),
        "--mock-profile", &profile,
        "--out-dir", dir.path().join("bad3").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("lines 1 and 2"));

    // Unknown sample id in render is a data error too.
    let output = sumjudge(&[
        "render",
        "--corpus", &corpus,
        "--mock-profile", &profile,
        "--ids", "nope",
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn evaluate_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let profile = write_profile(dir.path(), 1, 5);

    for run in ["a", "b"] {
        let output = sumjudge(&[
            "evaluate",
            "--corpus", &corpus,
            "--mock-profile", &profile,
            "--aggregation", "approximation",
            "--n-samples", "5",
            "--seed", "99",
            "--out-dir", dir.path().join(run).to_str().unwrap(),
        ]);
        assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    }
    let a = std::fs::read(dir.path().join("a/records.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/records.jsonl")).unwrap();
    assert_eq!(a, b, "seeded runs must be byte-identical across processes");
}
