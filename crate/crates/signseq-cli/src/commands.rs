//! Subcommand implementations.

use std::path::Path;

use signseq_core::checkpoint;
use signseq_core::data::{load_samples, tokenize_entry, TokenizerKind};
use signseq_core::error::{Error, Result};
use signseq_core::metrics::{self, DIVERSITY_THRESHOLDS};
use signseq_core::seq2seq::greedy_decode;
use signseq_core::significance::{paired_bootstrap, SystemOutput};
use signseq_core::synthcorpus;
use signseq_core::tokenization::{
    read_lines, write_lines, FeatureFile, Manifest, ManifestEntry,
};
use signseq_core::trainer::train_translation;
use signseq_core::vocab::Vocab;

use crate::config::Config;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FINAL_CHECKPOINT: &str = "ckpt-final";

pub fn gen_synth(config: &Config, out_dir: &Path) -> Result<()> {
    let synth = config.synth_config()?;
    let output = synthcorpus::generate(&synth, out_dir)?;
    println!(
        "generated {} train / {} dev / {} test samples under {}",
        output.counts.0,
        output.counts.1,
        output.counts.2,
        out_dir.display()
    );
    Ok(())
}

/// Materialize token sequences as feature files plus a rewritten manifest.
pub fn tokenize(config: &Config, manifest_path: &Path, out_dir: &Path) -> Result<()> {
    let selection = config.tokenizer_selection()?;
    let manifest = Manifest::load(manifest_path)?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let tokens = tokenize_entry(&manifest, entry, &selection)?;
        let rel = format!("tokens/{}.feat", entry.sample_id);
        let dim = tokens.dim();
        let data: Vec<f64> = tokens.tokens.iter().flatten().copied().collect();
        FeatureFile::new(tokens.len(), dim, data)?.save(&out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            sample_id: entry.sample_id.clone(),
            feature_path: Some(rel),
            companion_path: None,
            keypoint_path: None,
            sentence: entry.sentence.clone(),
        });
    }
    let count = entries.len();
    let tokenized = Manifest { entries, base_dir: out_dir.to_path_buf() };
    tokenized.save(&out_dir.join("tokenized.manifest"))?;
    println!(
        "tokenized {count} samples ({}) into {}",
        selection.kind.label(),
        out_dir.display()
    );
    Ok(())
}

pub fn train(config: &mut Config, run_dir: &Path, resume: Option<&Path>) -> Result<()> {
    let vocab_path = config.require_path("data.vocab")?;
    let train_manifest_path = config.require_path("data.train_manifest")?;
    let vocab = Vocab::load(&vocab_path)?;
    let selection = config.tokenizer_selection()?;

    let train_manifest = Manifest::load(&train_manifest_path)?;
    let train_samples = load_samples(&train_manifest, &selection, &vocab)?;
    let dev_samples = match config.get("data.dev_manifest") {
        Some(_) => {
            let dev_path = config.require_path("data.dev_manifest")?;
            load_samples(&Manifest::load(&dev_path)?, &selection, &vocab)?
        }
        None => Vec::new(),
    };

    let token_dim = train_samples[0].tokens.dim();
    let input_proj = selection.kind == TokenizerKind::Clips;
    let model_config = config.model_config(token_dim, vocab.len(), input_proj)?;
    let train_config = config.train_config()?;

    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let snapshot_path = run_dir.join(SNAPSHOT_FILE);
    if snapshot_path.exists() && resume.is_none() {
        return Err(Error::Config(format!(
            "{} already holds a config snapshot; pass --resume or use a fresh run dir",
            run_dir.display()
        )));
    }
    if !snapshot_path.exists() {
        std::fs::write(&snapshot_path, config.snapshot_text())
            .map_err(|e| Error::io(snapshot_path.display().to_string(), e))?;
    }
    vocab.save(&run_dir.join(VOCAB_FILE))?;

    let resume_ckpt = match resume {
        Some(path) => Some(checkpoint::load(path)?),
        None => None,
    };
    let outcome = train_translation(
        &train_samples,
        &dev_samples,
        &vocab,
        &model_config,
        &train_config,
        Some(run_dir),
        resume_ckpt,
    )?;

    if let Some(last) = outcome.trace.last() {
        println!(
            "finished {} iterations: train loss {:.4}, dev loss {:.4}, dev BLEU-4 {:.2}",
            last.iteration, last.train_loss, last.eval_loss, last.eval_bleu4
        );
    }

    if !dev_samples.is_empty() {
        let max_len = dev_samples.iter().map(|s| s.target.len()).max().unwrap_or(8) * 2 + 2;
        let mut hypotheses = Vec::with_capacity(dev_samples.len());
        let mut references = Vec::with_capacity(dev_samples.len());
        for sample in &dev_samples {
            let ids = greedy_decode(&sample.tokens, &outcome.final_params, &model_config, max_len)?;
            hypotheses.push(vocab.decode(&ids)?);
            references.push(sample.sentence.clone());
        }
        let report = metrics::evaluate_lines("final", &hypotheses, &references)?;
        std::fs::write(run_dir.join("report.kv"), report.key_values())
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        std::fs::write(run_dir.join("report.txt"), report.table())
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        print!("{}", report.table());
    }
    Ok(())
}

/// Greedy-decode a manifest with a trained run directory.
pub fn translate(
    run_dir: &Path,
    manifest_path: &Path,
    out_path: &Path,
    checkpoint_file: Option<&Path>,
    max_len: usize,
) -> Result<()> {
    let mut snapshot = Config::default();
    snapshot.merge_file(&run_dir.join(SNAPSHOT_FILE))?;
    let vocab = Vocab::load(&run_dir.join(VOCAB_FILE))?;
    let default_ckpt = run_dir.join(FINAL_CHECKPOINT);
    let ckpt = checkpoint::load(checkpoint_file.unwrap_or(&default_ckpt))?;
    let selection = snapshot.tokenizer_selection()?;

    let manifest = Manifest::load(manifest_path)?;
    let mut lines = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let tokens = tokenize_entry(&manifest, entry, &selection)?;
        let ids = greedy_decode(&tokens, &ckpt.params, &ckpt.config, max_len)?;
        lines.push(vocab.decode(&ids)?);
    }
    write_lines(out_path, &lines)?;
    println!("translated {} sentences into {}", lines.len(), out_path.display());
    Ok(())
}

pub fn evaluate(
    hypotheses_path: &Path,
    references_path: &Path,
    out_path: Option<&Path>,
    system: &str,
    stopwords_path: Option<&Path>,
) -> Result<()> {
    let hypotheses = read_lines(hypotheses_path)?;
    let references = read_lines(references_path)?;
    let report = metrics::evaluate_lines(system, &hypotheses, &references)?;
    print!("{}", report.table());

    let mut kv = report.key_values();
    if let Some(stopwords_path) = stopwords_path {
        let stopwords = read_lines(stopwords_path)?;
        let stop_refs: Vec<&str> = stopwords.iter().map(String::as_str).collect();
        let tokenized: Vec<Vec<&str>> =
            hypotheses.iter().map(|l| metrics::tokenize(l)).collect();
        let counts =
            metrics::unique_word_counts(&tokenized, &stop_refs, &DIVERSITY_THRESHOLDS)?;
        println!("unique words over thresholds {DIVERSITY_THRESHOLDS:?}: {counts:?}");
        for (t, c) in DIVERSITY_THRESHOLDS.iter().zip(&counts) {
            kv.push_str(&format!("unique_words_gt{t}={c}\n"));
        }
    }
    if let Some(out) = out_path {
        std::fs::write(out, kv).map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    system_a_path: &Path,
    system_b_path: &Path,
    references_path: &Path,
    sizes: &[usize],
    samples: usize,
    seed: u64,
    out_path: Option<&Path>,
) -> Result<()> {
    let name = |p: &Path| {
        p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "system".into())
    };
    let a = SystemOutput::new(name(system_a_path), read_lines(system_a_path)?);
    let b = SystemOutput::new(name(system_b_path), read_lines(system_b_path)?);
    let references = read_lines(references_path)?;
    let report = paired_bootstrap(&a, &b, &references, sizes, samples, seed)?;
    print!("{}", report.table());
    if let Some(out) = out_path {
        std::fs::write(out, report.key_values())
            .map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    Ok(())
}

/// Parse "250,400,600".
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad subset size {s:?}")))
        })
        .collect()
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    Ok(())
}

/// Default decode length bound for translate.
pub const DEFAULT_MAX_LEN: usize = 40;
