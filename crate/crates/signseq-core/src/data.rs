//! Dataset assembly: manifests plus a tokenizer selection become training
//! samples.

use crate::error::{Error, Result};
use crate::tokenization::{
    clip_tokenize, reverse_tokens, tokenize_features, tokenize_keypoints, BodyPart,
    ClipAggregator, FeatureFile, KeypointFile, Manifest, ManifestEntry, TokenSequence,
    DEFAULT_CLIP_WINDOW,
};
use crate::vocab::Vocab;

/// One (source, token sequence, target) pair with corpus identifiers.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub tokens: TokenSequence,
    /// EOS-terminated target word ids.
    pub target: Vec<usize>,
    pub sentence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Keypoints,
    Features,
    FeaturesCompanion,
    Clips,
}

impl TokenizerKind {
    pub fn label(self) -> &'static str {
        match self {
            TokenizerKind::Keypoints => "keypoints",
            TokenizerKind::Features => "features",
            TokenizerKind::FeaturesCompanion => "features+companion",
            TokenizerKind::Clips => "clips",
        }
    }

    pub fn parse(s: &str) -> Result<TokenizerKind> {
        match s {
            "keypoints" => Ok(TokenizerKind::Keypoints),
            "features" => Ok(TokenizerKind::Features),
            "features+companion" => Ok(TokenizerKind::FeaturesCompanion),
            "clips" => Ok(TokenizerKind::Clips),
            other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
        }
    }
}

/// Which pathway turns a manifest entry into tokens.
#[derive(Debug, Clone)]
pub struct TokenizerSelection {
    pub kind: TokenizerKind,
    pub parts: Vec<BodyPart>,
    pub window: usize,
    pub reverse: bool,
}

impl Default for TokenizerSelection {
    fn default() -> Self {
        TokenizerSelection {
            kind: TokenizerKind::Features,
            parts: vec![BodyPart::Body, BodyPart::RightHand, BodyPart::LeftHand],
            window: DEFAULT_CLIP_WINDOW,
            reverse: false,
        }
    }
}

/// Tokenize one manifest entry.
pub fn tokenize_entry(
    manifest: &Manifest,
    entry: &ManifestEntry,
    selection: &TokenizerSelection,
) -> Result<TokenSequence> {
    let id = &entry.sample_id;
    let need = |path: &Option<String>, what: &str| -> Result<String> {
        path.clone().ok_or_else(|| Error::Data(format!("{id}: manifest lacks a {what} path")))
    };
    let seq = match selection.kind {
        TokenizerKind::Keypoints => {
            let path = manifest.resolve(&need(&entry.keypoint_path, "keypoint")?);
            let file = KeypointFile::load(&path)?;
            tokenize_keypoints(&file.frames, &selection.parts, id)?
        }
        TokenizerKind::Features => {
            let path = manifest.resolve(&need(&entry.feature_path, "feature")?);
            let file = FeatureFile::load(&path)?;
            tokenize_features(&file, None, id)?
        }
        TokenizerKind::FeaturesCompanion => {
            let path = manifest.resolve(&need(&entry.feature_path, "feature")?);
            let companion_path = manifest.resolve(&need(&entry.companion_path, "companion")?);
            let file = FeatureFile::load(&path)?;
            let companion = FeatureFile::load(&companion_path)?;
            tokenize_features(&file, Some(&companion), id)?
        }
        TokenizerKind::Clips => {
            let path = manifest.resolve(&need(&entry.feature_path, "feature")?);
            let file = FeatureFile::load(&path)?;
            clip_tokenize(&file, selection.window, &ClipAggregator::MeanPool, id)?
        }
    };
    Ok(if selection.reverse { reverse_tokens(&seq) } else { seq })
}

/// Load and tokenize every manifest entry.
pub fn load_samples(
    manifest: &Manifest,
    selection: &TokenizerSelection,
    vocab: &Vocab,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let tokens = tokenize_entry(manifest, entry, selection)?;
        samples.push(Sample {
            id: entry.sample_id.clone(),
            tokens,
            target: vocab.encode(&entry.sentence),
            sentence: entry.sentence.clone(),
        });
    }
    if samples.is_empty() {
        return Err(Error::Data("manifest contains no samples".into()));
    }
    let dim = samples[0].tokens.dim();
    if let Some(bad) = samples.iter().find(|s| s.tokens.dim() != dim) {
        return Err(Error::Data(format!(
            "sample {} has token dim {}, expected {}",
            bad.id,
            bad.tokens.dim(),
            dim
        )));
    }
    Ok(samples)
}
