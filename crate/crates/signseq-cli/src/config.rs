//! Flat key-value experiment configuration with section prefixes.
//!
//! Values merge in order: preset, config file, repeated `--set key=value`
//! overrides, then the SIGNSEQ_SEED environment variable for the seed.
//! The merged map is what lands in a run directory as the immutable
//! config snapshot.

use std::collections::BTreeMap;
use std::path::Path;

use signseq_core::data::{TokenizerKind, TokenizerSelection};
use signseq_core::error::{Error, Result};
use signseq_core::seq2seq::{AttentionKind, ModelConfig};
use signseq_core::synthcorpus::SynthConfig;
use signseq_core::tokenization::BodyPart;
use signseq_core::trainer::TrainConfig;
use signseq_core::training::OptimizerKind;

pub const SEED_ENV: &str = "SIGNSEQ_SEED";

const DESK_PRESET: &str = "\
seed=1
model.layers=2
model.hidden=64
model.embed_dim=32
model.attention=bahdanau
model.dropout=0.1
model.residual=true
model.init_std=0.02
train.iterations=3000
train.checkpoint_interval=1000
train.average_window=5
train.learning_rate=1e-3
train.optimizer=adam
train.batch_size=16
train.teacher_forcing_start=1.0
train.teacher_forcing_end=1.0
train.clip_norm=5.0
tokenizer.kind=features
tokenizer.parts=body,right,left
tokenizer.window=8
tokenizer.reverse=false
";

const PAPER_COMMON: &str = "\
seed=1
model.layers=4
model.hidden=512
model.embed_dim=256
model.dropout=0.2
model.residual=true
model.init_std=0.02
train.iterations=30000
train.checkpoint_interval=1000
train.average_window=5
train.learning_rate=1e-4
train.optimizer=adam
train.batch_size=16
train.teacher_forcing_start=1.0
train.teacher_forcing_end=1.0
train.clip_norm=5.0
tokenizer.kind=features
tokenizer.parts=body,right,left
tokenizer.window=8
tokenizer.reverse=false
";

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn preset(name: &str) -> Result<Config> {
        let text = match name {
            "desk" => DESK_PRESET.to_string(),
            "paper-bahdanau" => format!("{PAPER_COMMON}model.attention=bahdanau\n"),
            "paper-luong" => format!("{PAPER_COMMON}model.attention=luong\n"),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; available: desk, paper-bahdanau, paper-luong"
                )))
            }
        };
        let mut config = Config::default();
        config.merge_text(&text)?;
        Ok(config)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        self.merge_text(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set wants key=value, got {item:?}"))
            })?;
            self.set(key.trim(), value.trim());
        }
        Ok(())
    }

    /// SIGNSEQ_SEED beats every other seed source.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            value
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={value} is not a seed")))?;
            self.set("seed", &value);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn snapshot_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing config key {key}")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad integer {key}={v}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad real {key}={v}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad flag {key}={v}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad integer {key}={v}"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64_or("seed", 1)
    }

    /// model.* keys; token_dim and vocab_size come from the data.
    pub fn model_config(
        &self,
        token_dim: usize,
        vocab_size: usize,
        input_proj: bool,
    ) -> Result<ModelConfig> {
        let config = ModelConfig {
            token_dim,
            layers: self.usize_or("model.layers", 2)?,
            hidden: self.usize_or("model.hidden", 64)?,
            embed_dim: self.usize_or("model.embed_dim", 32)?,
            vocab_size,
            attention: AttentionKind::parse(self.get("model.attention").unwrap_or("bahdanau"))?,
            dropout: self.f64_or("model.dropout", 0.1)?,
            residual: self.bool_or("model.residual", true)?,
            init_std: self.f64_or("model.init_std", 0.02)?,
            input_proj,
        };
        config.validate()?;
        Ok(config)
    }

    /// train.* keys.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let clip_norm = match self.get("train.clip_norm") {
            None => Some(5.0),
            Some("off") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad clip norm {v}")))?,
            ),
        };
        let config = TrainConfig {
            iterations: self.usize_or("train.iterations", 30_000)?,
            checkpoint_interval: self.usize_or("train.checkpoint_interval", 1000)?,
            average_window: self.usize_or("train.average_window", 5)?,
            learning_rate: self.f64_or("train.learning_rate", 1e-4)?,
            optimizer: OptimizerKind::parse(self.get("train.optimizer").unwrap_or("adam"))?,
            batch_size: self.usize_or("train.batch_size", 16)?,
            teacher_forcing_start: self.f64_or("train.teacher_forcing_start", 1.0)?,
            teacher_forcing_end: self.f64_or("train.teacher_forcing_end", 1.0)?,
            clip_norm,
            seed: self.seed()?,
        };
        config.validate()?;
        Ok(config)
    }

    /// tokenizer.* keys.
    pub fn tokenizer_selection(&self) -> Result<TokenizerSelection> {
        let kind = TokenizerKind::parse(self.get("tokenizer.kind").unwrap_or("features"))?;
        let parts = self
            .get("tokenizer.parts")
            .unwrap_or("body,right,left")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| BodyPart::parse(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenizerSelection {
            kind,
            parts,
            window: self.usize_or("tokenizer.window", 8)?,
            reverse: self.bool_or("tokenizer.reverse", false)?,
        })
    }

    /// synth.* keys.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let defaults = SynthConfig::default();
        let ratios = match self.get("synth.split_ratios") {
            None => defaults.split_ratios,
            Some(text) => {
                let parts: Vec<f64> = text
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad split ratios {text:?}")))?;
                if parts.len() != 3 {
                    return Err(Error::Config("split ratios want three values".into()));
                }
                (parts[0], parts[1], parts[2])
            }
        };
        let config = SynthConfig {
            seed: self.seed()?,
            languages: self.usize_or("synth.languages", defaults.languages)?,
            sentences: self.usize_or("synth.sentences", defaults.sentences)?,
            gloss_len_range: (
                self.usize_or("synth.gloss_len_min", defaults.gloss_len_range.0)?,
                self.usize_or("synth.gloss_len_max", defaults.gloss_len_range.1)?,
            ),
            proto_len_range: (
                self.usize_or("synth.proto_len_min", defaults.proto_len_range.0)?,
                self.usize_or("synth.proto_len_max", defaults.proto_len_range.1)?,
            ),
            frame_noise: self.f64_or("synth.frame_noise", defaults.frame_noise)?,
            garbage_prob: self.f64_or("synth.garbage_prob", defaults.garbage_prob)?,
            domain_shift: self.f64_or("synth.domain_shift", defaults.domain_shift)?,
            test_language: self.usize_or("synth.test_language", defaults.test_language)?,
            split_ratios: ratios,
            gloss_count: self.usize_or("synth.gloss_count", defaults.gloss_count)?,
            function_words: self.usize_or("synth.function_words", defaults.function_words)?,
            feature_dim: self.usize_or("synth.feature_dim", defaults.feature_dim)?,
            companion_dim: self.usize_or("synth.companion_dim", defaults.companion_dim)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn require_path(&self, key: &str) -> Result<std::path::PathBuf> {
        let raw = self.required(key)?;
        let path = std::path::PathBuf::from(raw);
        if !path.exists() {
            return Err(Error::Config(format!("{key} points to missing path {raw}")));
        }
        Ok(path)
    }
}
