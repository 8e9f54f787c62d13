//! Experiment orchestration for sign-language sequence translation:
//! synthetic corpus generation, tokenization, training, greedy
//! translation, metric evaluation and bootstrap comparison.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::DEFAULT_MAX_LEN;
use config::Config;
use signseq_core::error::Result;

#[derive(Parser)]
#[command(name = "signseq", version, about = "Sign-language sequence translation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named preset: desk, paper-bahdanau, paper-luong.
    #[arg(long)]
    preset: Option<String>,
    /// Key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single keys, repeatable: --set train.iterations=2000.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn assemble(&self, default_preset: &str) -> Result<Config> {
        let mut config = Config::preset(self.preset.as_deref().unwrap_or(default_preset))?;
        if let Some(path) = &self.config {
            config.merge_file(path)?;
        }
        config.apply_overrides(&self.set)?;
        config.apply_env_seed()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sign-language corpus.
    #[command(name = "gen-synth")]
    GenSynth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize token sequences from a manifest into feature files.
    Tokenize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a translation model into a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
        /// Training manifest (sets data.train_manifest).
        #[arg(long = "train-manifest")]
        train_manifest: Option<PathBuf>,
        /// Dev manifest for periodic evaluation (sets data.dev_manifest).
        #[arg(long = "dev-manifest")]
        dev_manifest: Option<PathBuf>,
        /// Vocabulary file (sets data.vocab).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Continue from a saved checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy-decode a manifest with a trained run directory.
    Translate {
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint inside or outside the run dir; defaults to ckpt-final.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "max-len", default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Score hypotheses against references.
    Evaluate {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Machine-readable key=value report file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "system")]
        system: String,
        /// Stop-word list for the unique-word diversity table.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Paired bootstrap comparison of two systems.
    Compare {
        #[arg(long = "system-a")]
        system_a: PathBuf,
        #[arg(long = "system-b")]
        system_b: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Comma-separated resample sizes.
        #[arg(long, default_value = "250,400,600")]
        sizes: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { config, out } => {
            let config = config.assemble("desk")?;
            commands::gen_synth(&config, &out)
        }
        Command::Tokenize { config, manifest, out } => {
            let config = config.assemble("desk")?;
            commands::tokenize(&config, &manifest, &out)
        }
        Command::Train { config, run_dir, train_manifest, dev_manifest, vocab, resume } => {
            let mut config = config.assemble("desk")?;
            if let Some(p) = train_manifest {
                config.set("data.train_manifest", &p.display().to_string());
            }
            if let Some(p) = dev_manifest {
                config.set("data.dev_manifest", &p.display().to_string());
            }
            if let Some(p) = vocab {
                config.set("data.vocab", &p.display().to_string());
            }
            commands::train(&mut config, &run_dir, resume.as_deref())
        }
        Command::Translate { run_dir, manifest, out, checkpoint, max_len } => {
            commands::ensure_parent(&out)?;
            commands::translate(&run_dir, &manifest, &out, checkpoint.as_deref(), max_len)
        }
        Command::Evaluate { hypotheses, references, out, system, stopwords } => {
            commands::evaluate(
                &hypotheses,
                &references,
                out.as_deref(),
                &system,
                stopwords.as_deref(),
            )
        }
        Command::Compare { system_a, system_b, references, sizes, samples, seed, out } => {
            let sizes = commands::parse_sizes(&sizes)?;
            commands::compare(
                &system_a,
                &system_b,
                &references,
                &sizes,
                samples,
                seed,
                out.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
