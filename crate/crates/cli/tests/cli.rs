use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = include_str!("../../core/tests/data/toy_corpus.json");

fn acp(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acp"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("ACP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.json"), TOY).unwrap();
    dir
}

#[test]
fn build_cooc_then_anchors_on_toy() {
    let dir = toy_dir();
    ok(&acp(dir.path(), &["build-cooc", "--corpus", "toy.json", "--out", "cooc"]));
    for f in ["cooc_global.csv", "cooc_global_comp.csv", "cooc_bicycle.csv", "cooc_bicycle_comp.csv", "manifest.json"] {
        assert!(dir.path().join("cooc").join(f).exists(), "{f}");
    }
    let global = fs::read_to_string(dir.path().join("cooc/cooc_global.csv")).unwrap();
    assert!(global.starts_with("hold,ride,wash\n1,0.5,0.5\n"));

    let stdout = ok(&acp(dir.path(), &["anchors", "--cooc", "cooc", "--out", "groups.json"]));
    assert_eq!(stdout.trim(), "anchors: [ride, wash]");
    let groups: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("groups.json")).unwrap()).unwrap();
    assert_eq!(groups["anchors"], serde_json::json!([1, 2]));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = acp(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = acp(dir.path(), &["build-cooc", "--corpus", "x.json", "--out", "o", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_one_with_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad: serde_json::Value = serde_json::from_str(TOY).unwrap();
    bad["images"][1]["pairs"][0]["actions"] = serde_json::json!([7]);
    fs::write(dir.path().join("bad.json"), bad.to_string()).unwrap();
    let out = acp(dir.path(), &["build-cooc", "--corpus", "bad.json", "--out", "cooc"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:corpus_model:validation:"), "{stderr}");

    let out = acp(dir.path(), &["build-cooc", "--corpus", "missing.json", "--out", "cooc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:corpus_model:io:"));
}

#[test]
fn help_lists_flags_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 8] = [
        ("build-cooc", &["--corpus", "--out"]),
        ("anchors", &["--cooc", "--out"]),
        ("gen-data", &["--out", "--seed", "--zipf-exponent", "--label-drop-rate"]),
        ("train", &["--corpus", "--arch", "--lambda1", "--lambda2", "--lambda3", "--alpha", "--epochs", "--seed", "--out"]),
        ("eval", &["--checkpoint", "--corpus", "--postprocess", "--alpha"]),
        ("project", &["--probs", "--cooc", "--object"]),
        ("ablate", &["--table", "--epochs"]),
        ("report", &["--input"]),
    ];
    for (cmd, flags) in cases {
        let out = ok(&acp(dir.path(), &[cmd, "--help"]));
        for f in flags {
            assert!(out.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn project_reads_vector_and_bank() {
    let dir = toy_dir();
    ok(&acp(dir.path(), &["build-cooc", "--corpus", "toy.json", "--out", "cooc"]));
    fs::write(dir.path().join("a.json"), "[0, 0, 0]").unwrap();
    let out = ok(&acp(dir.path(), &["project", "--probs", "a.json", "--cooc", "cooc", "--alpha", "1"]));
    let v: Vec<f64> = serde_json::from_str(out.trim()).unwrap();
    // All-zero input: column sums of C' over N = 3.
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    let out = acp(dir.path(), &["project", "--probs", "a.json", "--cooc", "cooc", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:acp_projection:contract:"));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_is_idempotent() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok(&acp(d, &["gen-data", "--out", "data", "--seed", "3", "--images", "150", "--test-images", "60", "--feature-dim", "8"]));
        ok(&acp(d, &["build-cooc", "--corpus", "data/train.json", "--out", "cooc"]));
        ok(&acp(d, &["anchors", "--cooc", "cooc", "--out", "groups.json"]));
        ok(&acp(
            d,
            &[
                "train", "--corpus", "data/train.json", "--cooc", "cooc", "--groups", "groups.json", "--epochs", "2",
                "--hidden", "8", "--out", "model.json", "--history", "history.csv",
            ],
        ));
        let text = ok(&acp(
            d,
            &[
                "eval", "--checkpoint", "model.json", "--corpus", "data/test.json", "--train-corpus", "data/train.json",
                "--cooc", "cooc", "--postprocess", "on", "--out", "report.json",
            ],
        ));
        assert!(text.contains("rare"));
        let rendered = ok(&acp(d, &["report", "--input", "report.json"]));
        assert_eq!(rendered, text);
        let history = fs::read_to_string(d.join("history.csv")).unwrap();
        assert!(history.starts_with("epoch,step,loss_total,loss_gt,loss_teacher_pred,loss_teacher_gt\n0,0,"));
        (snapshot(d), text)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(ta, tb);
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
}

#[test]
fn ablate_on_given_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&acp(d, &["gen-data", "--out", "data", "--images", "100", "--test-images", "40", "--feature-dim", "6"]));
    let text = ok(&acp(
        d,
        &[
            "ablate", "--train", "data/train.json", "--test", "data/test.json", "--table", "architectures", "--epochs",
            "1", "--hidden", "6", "--out", "table.json",
        ],
    ));
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("(D) Hierarchical"));
    assert_eq!(ok(&acp(d, &["report", "--input", "table.json"])), text);
}
