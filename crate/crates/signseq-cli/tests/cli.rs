//! End-to-end runs of the signseq binary: corpus generation, tokenization,
//! a tiny training run, translation, evaluation and comparison.

use std::path::Path;
use std::process::{Command, Output};

fn signseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signseq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn full_pipeline_on_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");

    let out = signseq(&[
        "gen-synth",
        "--out",
        &path(&corpus),
        "--set",
        "synth.sentences=24",
        "--set",
        "synth.split_ratios=0.75,0.125,0.125",
        "--set",
        "synth.gloss_count=8",
        "--set",
        "synth.function_words=4",
        "--set",
        "synth.gloss_len_min=2",
        "--set",
        "synth.gloss_len_max=3",
        "--set",
        "synth.proto_len_min=3",
        "--set",
        "synth.proto_len_max=4",
        "--set",
        "synth.feature_dim=6",
        "--set",
        "synth.companion_dim=4",
    ]);
    assert_ok(&out);
    assert!(corpus.join("train.manifest").exists());
    assert!(corpus.join("vocab.txt").exists());
    assert!(corpus.join("train.text").exists());
    assert!(corpus.join("train.gloss").exists());

    // tokenize: materialized token files plus a rewritten manifest
    let tokenized = dir.path().join("tokenized");
    let out = signseq(&[
        "tokenize",
        "--manifest",
        &path(&corpus.join("train.manifest")),
        "--out",
        &path(&tokenized),
        "--set",
        "tokenizer.kind=keypoints",
        "--set",
        "tokenizer.parts=right,left",
    ]);
    assert_ok(&out);
    assert!(tokenized.join("tokenized.manifest").exists());

    // train a deliberately tiny model for a handful of iterations
    let out = signseq(&[
        "train",
        "--run-dir",
        &path(&run),
        "--train-manifest",
        &path(&corpus.join("train.manifest")),
        "--dev-manifest",
        &path(&corpus.join("dev.manifest")),
        "--vocab",
        &path(&corpus.join("vocab.txt")),
        "--set",
        "train.iterations=4",
        "--set",
        "train.checkpoint_interval=2",
        "--set",
        "train.batch_size=2",
        "--set",
        "model.hidden=8",
        "--set",
        "model.embed_dim=4",
        "--set",
        "model.layers=1",
        "--set",
        "model.dropout=0.0",
    ]);
    assert_ok(&out);
    assert!(run.join("config.snapshot").exists());
    assert!(run.join("vocab.txt").exists());
    assert!(run.join("trace.log").exists());
    assert!(run.join("ckpt-final").exists());
    assert!(run.join("report.kv").exists());

    // a second train into the same run dir must refuse
    let out = signseq(&[
        "train",
        "--run-dir",
        &path(&run),
        "--train-manifest",
        &path(&corpus.join("train.manifest")),
        "--vocab",
        &path(&corpus.join("vocab.txt")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[config]:"), "stderr: {stderr}");

    // translate the dev manifest using only the run dir
    let hyp = dir.path().join("dev.hyp");
    let out = signseq(&[
        "translate",
        "--run-dir",
        &path(&run),
        "--manifest",
        &path(&corpus.join("dev.manifest")),
        "--out",
        &path(&hyp),
    ]);
    assert_ok(&out);
    let hyp_lines = std::fs::read_to_string(&hyp).unwrap();
    let dev_lines = std::fs::read_to_string(corpus.join("dev.text")).unwrap();
    assert_eq!(hyp_lines.lines().count(), dev_lines.lines().count());

    // evaluate hypotheses == references: BLEU-4 of 100
    let report = dir.path().join("self.kv");
    let out = signseq(&[
        "evaluate",
        "--hypotheses",
        &path(&corpus.join("dev.text")),
        "--references",
        &path(&corpus.join("dev.text")),
        "--out",
        &path(&report),
    ]);
    assert_ok(&out);
    let kv = std::fs::read_to_string(&report).unwrap();
    assert!(kv.contains("bleu4=100.00"), "report: {kv}");

    // compare a system against itself: zero confidence everywhere
    let cmp = dir.path().join("cmp.kv");
    let out = signseq(&[
        "compare",
        "--system-a",
        &path(&corpus.join("dev.text")),
        "--system-b",
        &path(&corpus.join("dev.text")),
        "--references",
        &path(&corpus.join("dev.text")),
        "--sizes",
        "5,10",
        "--samples",
        "50",
        "--out",
        &path(&cmp),
    ]);
    assert_ok(&out);
    let kv = std::fs::read_to_string(&cmp).unwrap();
    assert!(kv.contains("confidence.5=0.0000"), "report: {kv}");
    assert!(kv.contains("confidence.10=0.0000"), "report: {kv}");

    // deterministic re-evaluation: identical report bytes
    let report2 = dir.path().join("self2.kv");
    let out = signseq(&[
        "evaluate",
        "--hypotheses",
        &path(&corpus.join("dev.text")),
        "--references",
        &path(&corpus.join("dev.text")),
        "--out",
        &path(&report2),
    ]);
    assert_ok(&out);
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report2).unwrap()
    );
}

#[test]
fn missing_input_yields_machine_parsable_error() {
    let out = signseq(&[
        "evaluate",
        "--hypotheses",
        "/nonexistent/h.txt",
        "--references",
        "/nonexistent/r.txt",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let first = stderr.lines().next().unwrap_or_default();
    assert!(first.starts_with("error[io]:"), "stderr: {stderr}");
}

#[test]
fn seed_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = dir.path().join("c1");
    let c2 = dir.path().join("c2");
    let gen = |out_dir: &Path, env_seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_signseq"));
        cmd.args([
            "gen-synth",
            "--out",
            &path(out_dir),
            "--set",
            "seed=1",
            "--set",
            "synth.sentences=6",
            "--set",
            "synth.split_ratios=0.5,0.25,0.25",
            "--set",
            "synth.gloss_count=5",
            "--set",
            "synth.function_words=3",
        ]);
        if let Some(seed) = env_seed {
            cmd.env("SIGNSEQ_SEED", seed);
        }
        let out = cmd.output().unwrap();
        assert_ok(&out);
    };
    gen(&c1, None);
    gen(&c2, Some("99"));
    let a = std::fs::read(c1.join("train.text")).unwrap();
    let b = std::fs::read(c2.join("train.text")).unwrap();
    assert_ne!(a, b, "env seed must override the config seed");
}
