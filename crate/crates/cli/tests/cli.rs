//! Process-level tests of the `patchdesc` binary: exit codes, stage smoke
//! contracts, rerun determinism, and stale-stage detection.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchdesc"))
}

fn sample_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_corpus.jsonl")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("bad json {text:?}: {e}"))
}

/// Shared flags for a tiny, fast model.
fn tiny_flags<'a>(corpus: &'a str, workdir: &'a str) -> Vec<String> {
    [
        "--corpus",
        corpus,
        "--workdir",
        workdir,
        "--clusters",
        "4",
        "--max-history",
        "2",
        "--embedding-dim",
        "16",
        "--encoder-layers",
        "1",
        "--decoder-layers",
        "1",
        "--attention-heads",
        "2",
        "--ff-dim",
        "32",
        "--max-source-len",
        "96",
        "--max-target-len",
        "12",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--max-gen-len",
        "8",
        "--min-token-freq",
        "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--workdir",
        dir.path().to_str().unwrap(),
        "ingest",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/corpus.jsonl"), "{stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["ingest", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--corpus",
        sample_corpus().to_str().unwrap(),
        "--workdir",
        dir.path().to_str().unwrap(),
        "--split-ratio",
        "1.5",
        "ingest",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_smoke_writes_three_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path().join("wd");
    let corpus = sample_corpus();
    let args = [
        "--corpus",
        corpus.to_str().unwrap(),
        "--workdir",
        wd.to_str().unwrap(),
        "ingest",
    ];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = stdout_json(&out);
    assert_eq!(stats["kept"], 10);
    assert_eq!(stats["dropped"], 2);
    for f in ["cleaned.jsonl", "split.jsonl", "manifest.json"] {
        assert!(wd.join(f).exists(), "{f} missing");
    }
    let first: Vec<Vec<u8>> = ["cleaned.jsonl", "split.jsonl"]
        .iter()
        .map(|f| std::fs::read(wd.join(f)).unwrap())
        .collect();
    let out2 = run(&args);
    assert_eq!(out2.status.code(), Some(0));
    let second: Vec<Vec<u8>> = ["cleaned.jsonl", "split.jsonl"]
        .iter()
        .map(|f| std::fs::read(wd.join(f)).unwrap())
        .collect();
    assert_eq!(first, second, "rerun changed outputs");
}

#[test]
fn prepare_without_ingest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--corpus",
        sample_corpus().to_str().unwrap(),
        "--workdir",
        dir.path().to_str().unwrap(),
        "prepare",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ingest"), "{stderr}");
}

#[test]
fn stale_inputs_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("synth.jsonl");
    let wd = dir.path().join("wd");
    let mut flags = tiny_flags(corpus.to_str().unwrap(), wd.to_str().unwrap());
    flags.push("synth".into());
    flags.push("--per-cluster".into());
    flags.push("4".into());
    assert_eq!(run(&flags.iter().map(|s| s.as_str()).collect::<Vec<_>>()).status.code(), Some(0));

    let base = tiny_flags(corpus.to_str().unwrap(), wd.to_str().unwrap());
    let with = |cmd: &str| {
        let mut v: Vec<String> = base.clone();
        v.push(cmd.into());
        v
    };
    let ingest = run(&with("ingest").iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(ingest.status.code(), Some(0));

    // Tamper with an ingest output; prepare must refuse it.
    let cleaned = wd.join("cleaned.jsonl");
    let mut bytes = std::fs::read(&cleaned).unwrap();
    bytes.extend_from_slice(b"\n");
    std::fs::write(&cleaned, bytes).unwrap();
    let prepare = run(&with("prepare").iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(prepare.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&prepare.stderr);
    assert!(stderr.contains("stale"), "{stderr}");
}

#[test]
fn single_objective_predictions_omit_groups() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("synth.jsonl");
    let wd = dir.path().join("wd");
    let mut base = tiny_flags(corpus.to_str().unwrap(), wd.to_str().unwrap());
    base.push("--single-objective".into());
    let with = |cmd: &str| {
        let mut v: Vec<String> = base.clone();
        v.push(cmd.into());
        v
    };
    let mut synth = with("synth");
    synth.push("--per-cluster".into());
    synth.push("4".into());
    for args in [synth, with("ingest"), with("prepare"), with("train"), with("generate"), with("eval")] {
        let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let out = run(&argv);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{argv:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let predictions = std::fs::read_to_string(wd.join("predictions.jsonl")).unwrap();
    assert!(!predictions.is_empty());
    for line in predictions.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("group_pred").is_none(), "unexpected group in {line}");
    }
    // Every prepared source carries the three segment markers, in order.
    let examples = std::fs::read_to_string(wd.join("examples.jsonl")).unwrap();
    for line in examples.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let tokens: Vec<&str> = v["source_tokens"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_str().unwrap())
            .collect();
        let pos = |m: &str| tokens.iter().position(|t| *t == m);
        let (c, s, h) = (pos("<code>"), pos("<scope>"), pos("<hist>"));
        assert!(c.is_some() && s.is_some() && h.is_some(), "{line}");
        assert!(c < s && s < h, "marker order broken in {line}");
    }
    let report: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(wd.join("report.json")).unwrap().trim())
            .unwrap();
    assert!(report.get("group_accuracy").is_none());
    assert_eq!(report["semsim_mode"], "proxy");
}

#[test]
fn analyze_aspects_emits_fractions() {
    let out = run(&[
        "--corpus",
        sample_corpus().to_str().unwrap(),
        "analyze-aspects",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    for key in ["all3", "ge2", "ge1"] {
        let f = v[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f), "{key} = {f}");
    }
}

#[test]
fn external_semsim_vectors_and_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("synth.jsonl");
    let wd = dir.path().join("wd");
    let base = tiny_flags(corpus.to_str().unwrap(), wd.to_str().unwrap());
    let with = |cmd: &str| {
        let mut v: Vec<String> = base.clone();
        v.push(cmd.into());
        v
    };
    let mut synth = with("synth");
    synth.push("--per-cluster".into());
    synth.push("4".into());
    for args in [synth, with("ingest"), with("prepare"), with("train"), with("generate")] {
        let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert_eq!(run(&argv).status.code(), Some(0));
    }
    // Vectors for every prediction id: eval succeeds in external mode.
    let predictions = std::fs::read_to_string(wd.join("predictions.jsonl")).unwrap();
    let ids: Vec<String> = predictions
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    let vectors_path = dir.path().join("vectors.jsonl");
    let mut lines = String::new();
    for id in &ids {
        lines.push_str(
            &serde_json::json!({"id": id, "ref_vec": [1.0, 0.0], "hyp_vec": [1.0, 0.0]})
                .to_string(),
        );
        lines.push('\n');
    }
    std::fs::write(&vectors_path, &lines).unwrap();
    let mut eval = with("eval");
    eval.push("--semsim-vectors".into());
    eval.push(vectors_path.to_str().unwrap().into());
    let out = run(&eval.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["semsim_mode"], "external");
    assert_eq!(report["semsim"].as_f64().unwrap(), 100.0);

    // Drop one id: eval must fail naming it.
    let truncated: String = lines.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(&vectors_path, truncated).unwrap();
    let out = run(&eval.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&ids[0]), "{stderr}");
}
