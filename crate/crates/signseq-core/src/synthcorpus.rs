//! Deterministic generator of a toy sign language.
//!
//! Latent gloss sequences are rendered as keypoint and feature frame
//! sequences and paired with target sentences produced by a fixed
//! synchronous grammar (deterministic gloss-to-word mapping, final-gloss
//! fronting, inserted function words), so translation is non-monotonic
//! rather than a transliteration. Knobs cover frame noise, garbage-frame
//! insertion, per-language affine domain shift, and split ratios. Output
//! is byte-reproducible from (seed, config).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::XorShiftStar;
use crate::tokenization::{
    write_lines, FeatureFile, Joint, KeypointFile, KeypointFrame, Manifest, ManifestEntry,
};
use crate::vocab::Vocab;

pub const BODY_JOINTS: usize = 8;
pub const HAND_JOINTS: usize = 21;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Related languages sharing the gloss inventory; language 0 is the
    /// rendering used for training.
    pub languages: usize,
    pub sentences: usize,
    pub gloss_len_range: (usize, usize),
    /// Per-gloss prototype length range in frames.
    pub proto_len_range: (usize, usize),
    pub frame_noise: f64,
    pub garbage_prob: f64,
    pub domain_shift: f64,
    /// Language the test split is rendered in.
    pub test_language: usize,
    pub split_ratios: (f64, f64, f64),
    pub gloss_count: usize,
    pub function_words: usize,
    pub feature_dim: usize,
    pub companion_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            languages: 1,
            sentences: 700,
            gloss_len_range: (2, 5),
            proto_len_range: (3, 10),
            frame_noise: 0.05,
            garbage_prob: 0.05,
            domain_shift: 0.0,
            test_language: 0,
            split_ratios: (6.0 / 7.0, 0.5 / 7.0, 0.5 / 7.0),
            gloss_count: 60,
            function_words: 30,
            feature_dim: 16,
            companion_dim: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.languages == 0 || self.sentences == 0 || self.gloss_count == 0 {
            return Err(Error::Config("languages, sentences, gloss_count must be positive".into()));
        }
        if self.test_language >= self.languages {
            return Err(Error::Config(format!(
                "test language {} outside the {} configured languages",
                self.test_language, self.languages
            )));
        }
        let (a, b) = self.gloss_len_range;
        if a == 0 || a > b {
            return Err(Error::Config("bad gloss length range".into()));
        }
        let (pa, pb) = self.proto_len_range;
        if pa == 0 || pa > pb {
            return Err(Error::Config("bad prototype length range".into()));
        }
        if !(0.0..=1.0).contains(&self.garbage_prob) {
            return Err(Error::Config("garbage probability outside [0, 1]".into()));
        }
        let (r1, r2, r3) = self.split_ratios;
        if r1 < 0.0 || r2 < 0.0 || r3 < 0.0 || (r1 + r2 + r3 - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must be nonnegative and sum to 1".into()));
        }
        let splits = self.split_counts();
        if splits.0 == 0 {
            return Err(Error::Config("split leaves no training samples".into()));
        }
        Ok(())
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.sentences;
        let train = (self.split_ratios.0 * n as f64).round() as usize;
        let dev = (self.split_ratios.1 * n as f64).round() as usize;
        let train = train.min(n);
        let dev = dev.min(n - train);
        (train, dev, n - train - dev)
    }
}

// ---------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------

pub fn gloss_label(g: usize) -> String {
    format!("g{g:02}")
}

fn content_word(g: usize) -> String {
    format!("w{g:02}")
}

fn function_word(j: usize) -> String {
    format!("f{j:02}")
}

/// Deterministic synchronous grammar: the final gloss is fronted, and a
/// function word keyed by (gloss, position) precedes every second
/// remaining content word.
pub fn gloss_to_sentence(glosses: &[usize], function_words: usize) -> Vec<String> {
    assert!(!glosses.is_empty());
    let mut words = vec![content_word(glosses[glosses.len() - 1])];
    for (i, &g) in glosses[..glosses.len() - 1].iter().enumerate() {
        if i % 2 == 0 {
            words.push(function_word((g + i) % function_words));
        }
        words.push(content_word(g));
    }
    words
}

/// Inverse grammar: strip function words, undo the fronting. Returns the
/// gloss sequence when the sentence is grammatical.
pub fn sentence_to_gloss(words: &[String]) -> Option<Vec<usize>> {
    let content: Vec<usize> = words
        .iter()
        .filter(|w| w.starts_with('w'))
        .map(|w| w[1..].parse::<usize>().ok())
        .collect::<Option<Vec<usize>>>()?;
    if content.is_empty() || words.iter().any(|w| !w.starts_with('w') && !w.starts_with('f')) {
        return None;
    }
    let mut glosses = content[1..].to_vec();
    glosses.push(content[0]);
    Some(glosses)
}

/// The full target-side vocabulary of the grammar.
pub fn grammar_vocab(config: &SynthConfig) -> Result<Vocab> {
    let words = (0..config.gloss_count)
        .map(content_word)
        .chain((0..config.function_words).map(function_word));
    Vocab::from_words(words)
}

// ---------------------------------------------------------------------
// Inventory
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GlossPrototype {
    pub poses: Vec<KeypointFrame>,
    /// Per frame: hand feature vector.
    pub features: Vec<Vec<f64>>,
    /// Per frame: frame-context (companion) feature vector.
    pub companions: Vec<Vec<f64>>,
}

/// Per-language affine rendering parameters; the shared inventory plus
/// these shifts model related sign languages.
#[derive(Debug, Clone)]
pub struct DomainParams {
    pub coord_scale: f64,
    pub coord_offset: (f64, f64),
    pub feature_scale: Vec<f64>,
    pub feature_offset: Vec<f64>,
    pub companion_scale: Vec<f64>,
    pub companion_offset: Vec<f64>,
}

impl DomainParams {
    fn identity(feature_dim: usize, companion_dim: usize) -> DomainParams {
        DomainParams {
            coord_scale: 1.0,
            coord_offset: (0.0, 0.0),
            feature_scale: vec![1.0; feature_dim],
            feature_offset: vec![0.0; feature_dim],
            companion_scale: vec![1.0; companion_dim],
            companion_offset: vec![0.0; companion_dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlossInventory {
    pub prototypes: Vec<GlossPrototype>,
    pub domains: Vec<DomainParams>,
}

impl GlossInventory {
    pub fn build(config: &SynthConfig) -> GlossInventory {
        let prototypes = (0..config.gloss_count)
            .map(|g| {
                let mut rng = XorShiftStar::derive(config.seed, 1_000_000 + g as u64);
                let len = rng.next_range(config.proto_len_range.0, config.proto_len_range.1);
                let base = random_pose(&mut rng);
                let feature_base: Vec<f64> =
                    (0..config.feature_dim).map(|_| rng.next_normal()).collect();
                let companion_base: Vec<f64> =
                    (0..config.companion_dim).map(|_| rng.next_normal()).collect();
                let mut poses = Vec::with_capacity(len);
                let mut features = Vec::with_capacity(len);
                let mut companions = Vec::with_capacity(len);
                for frame in 0..len {
                    // drift the pose a little every frame: signs move
                    let t = frame as f64 * 0.15;
                    poses.push(drift_pose(&base, t, &mut rng));
                    features.push(
                        feature_base.iter().map(|v| v + 0.2 * t * v.signum()).collect(),
                    );
                    companions.push(companion_base.iter().map(|v| v + 0.1 * t).collect());
                }
                GlossPrototype { poses, features, companions }
            })
            .collect();

        let domains = (0..config.languages)
            .map(|lang| {
                if lang == 0 || config.domain_shift == 0.0 {
                    return DomainParams::identity(config.feature_dim, config.companion_dim);
                }
                let mut rng = XorShiftStar::derive(config.seed, 3_000_000 + lang as u64);
                let shift = config.domain_shift;
                DomainParams {
                    coord_scale: (1.0 + 0.1 * shift * rng.next_normal()).max(0.2),
                    coord_offset: (
                        20.0 * shift * rng.next_normal(),
                        20.0 * shift * rng.next_normal(),
                    ),
                    feature_scale: (0..config.feature_dim)
                        .map(|_| (1.0 + 0.1 * shift * rng.next_normal()).max(0.2))
                        .collect(),
                    feature_offset: (0..config.feature_dim)
                        .map(|_| shift * rng.next_normal())
                        .collect(),
                    companion_scale: (0..config.companion_dim)
                        .map(|_| (1.0 + 0.1 * shift * rng.next_normal()).max(0.2))
                        .collect(),
                    companion_offset: (0..config.companion_dim)
                        .map(|_| shift * rng.next_normal())
                        .collect(),
                }
            })
            .collect();
        GlossInventory { prototypes, domains }
    }
}

fn random_pose(rng: &mut XorShiftStar) -> KeypointFrame {
    let group = |rng: &mut XorShiftStar, n: usize, cx: f64, cy: f64, spread: f64| {
        (0..n)
            .map(|_| Joint {
                x: cx + spread * rng.next_normal(),
                y: cy + spread * rng.next_normal(),
                confidence: 0.5 + 0.5 * rng.next_f64(),
            })
            .collect::<Vec<_>>()
    };
    KeypointFrame {
        body: group(rng, BODY_JOINTS, 105.0, 80.0, 30.0),
        right: group(rng, HAND_JOINTS, 150.0, 140.0, 12.0),
        left: group(rng, HAND_JOINTS, 60.0, 140.0, 12.0),
    }
}

fn drift_pose(base: &KeypointFrame, t: f64, rng: &mut XorShiftStar) -> KeypointFrame {
    let (dx, dy) = (8.0 * t * rng.next_normal().sin(), 8.0 * t);
    let shift = |joints: &[Joint]| {
        joints
            .iter()
            .map(|j| Joint { x: j.x + dx, y: j.y + dy, confidence: j.confidence })
            .collect::<Vec<_>>()
    };
    KeypointFrame {
        body: shift(&base.body),
        right: shift(&base.right),
        left: shift(&base.left),
    }
}

// ---------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------

/// One fully rendered sample before it hits the disk formats.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub id: String,
    pub language: usize,
    pub glosses: Vec<usize>,
    pub sentence: String,
    pub frames: Vec<KeypointFrame>,
    pub features: Vec<Vec<f64>>,
    pub companions: Vec<Vec<f64>>,
    pub garbage_frames: usize,
}

/// Apply a language's affine shift to a rendered sample. Labels are
/// untouched.
pub fn render_domain(
    sample: &RenderedSample,
    language: usize,
    inventory: &GlossInventory,
) -> Result<RenderedSample> {
    let domain = inventory
        .domains
        .get(language)
        .ok_or_else(|| Error::Config(format!("unknown language {language}")))?;
    let frames = sample
        .frames
        .iter()
        .map(|f| {
            let map = |joints: &[Joint]| {
                joints
                    .iter()
                    .map(|j| Joint {
                        x: domain.coord_scale * j.x + domain.coord_offset.0,
                        y: domain.coord_scale * j.y + domain.coord_offset.1,
                        confidence: j.confidence,
                    })
                    .collect::<Vec<_>>()
            };
            KeypointFrame { body: map(&f.body), right: map(&f.right), left: map(&f.left) }
        })
        .collect();
    let affine = |rows: &[Vec<f64>], scale: &[f64], offset: &[f64]| {
        rows.iter()
            .map(|row| {
                row.iter()
                    .zip(scale.iter().zip(offset))
                    .map(|(v, (s, o))| s * v + o)
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    };
    Ok(RenderedSample {
        language,
        frames,
        features: affine(&sample.features, &domain.feature_scale, &domain.feature_offset),
        companions: affine(&sample.companions, &domain.companion_scale, &domain.companion_offset),
        ..sample.clone()
    })
}

/// Render sample `index` in language 0 (no shift).
fn render_base(
    index: usize,
    config: &SynthConfig,
    inventory: &GlossInventory,
) -> RenderedSample {
    let mut rng = XorShiftStar::derive(config.seed, 2_000_000 + index as u64);
    let k = rng.next_range(config.gloss_len_range.0, config.gloss_len_range.1);
    let glosses: Vec<usize> = (0..k).map(|_| rng.next_index(config.gloss_count)).collect();
    let sentence = gloss_to_sentence(&glosses, config.function_words).join(" ");

    let mut frames = Vec::new();
    let mut features = Vec::new();
    let mut companions = Vec::new();
    let mut garbage_frames = 0usize;
    let emit_garbage = |frames: &mut Vec<KeypointFrame>,
                            features: &mut Vec<Vec<f64>>,
                            companions: &mut Vec<Vec<f64>>,
                            rng: &mut XorShiftStar| {
        frames.push(random_pose(rng));
        features.push((0..config.feature_dim).map(|_| rng.next_normal()).collect());
        companions.push((0..config.companion_dim).map(|_| rng.next_normal()).collect());
    };

    for &g in &glosses {
        let proto = &inventory.prototypes[g];
        for (pose, (feat, comp)) in
            proto.poses.iter().zip(proto.features.iter().zip(&proto.companions))
        {
            // each emission slot is a garbage frame with the configured
            // probability, otherwise the next content frame
            while config.garbage_prob > 0.0 && rng.next_bool(config.garbage_prob) {
                emit_garbage(&mut frames, &mut features, &mut companions, &mut rng);
                garbage_frames += 1;
            }
            let mut noisy = |joints: &[Joint]| {
                joints
                    .iter()
                    .map(|j| Joint {
                        x: j.x + config.frame_noise * 10.0 * rng.next_normal(),
                        y: j.y + config.frame_noise * 10.0 * rng.next_normal(),
                        confidence: j.confidence,
                    })
                    .collect::<Vec<_>>()
            };
            frames.push(KeypointFrame {
                body: noisy(&pose.body),
                right: noisy(&pose.right),
                left: noisy(&pose.left),
            });
            features.push(
                feat.iter().map(|v| v + config.frame_noise * rng.next_normal()).collect(),
            );
            companions.push(
                comp.iter().map(|v| v + config.frame_noise * rng.next_normal()).collect(),
            );
        }
    }

    RenderedSample {
        id: format!("sample{index:05}"),
        language: 0,
        glosses,
        sentence,
        frames,
        features,
        companions,
        garbage_frames,
    }
}

// ---------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

pub const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dir: PathBuf,
    pub vocab_path: PathBuf,
    pub counts: (usize, usize, usize),
}

impl SynthOutput {
    pub fn manifest_path(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{}.manifest", split.label()))
    }
}

/// Generate the corpus on disk: per split a manifest, parallel sentence
/// and gold-gloss files, and per sample a hand-feature file, a companion
/// frame-feature file and a keypoint file.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    config.validate()?;
    let inventory = GlossInventory::build(config);
    let (n_train, n_dev, n_test) = config.split_counts();

    let vocab = grammar_vocab(config)?;
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;

    let mut offset = 0usize;
    for (split, count) in SPLITS.iter().zip([n_train, n_dev, n_test]) {
        let language = match split {
            Split::Test => config.test_language,
            _ => 0,
        };
        let mut entries = Vec::with_capacity(count);
        let mut sentences = Vec::with_capacity(count);
        let mut glosses = Vec::with_capacity(count);
        for local in 0..count {
            let index = offset + local;
            let base = render_base(index, config, &inventory);
            let sample = if language == 0 {
                base
            } else {
                render_domain(&base, language, &inventory)?
            };
            debug_assert_eq!(
                sentence_to_gloss(
                    &sample.sentence.split_whitespace().map(String::from).collect::<Vec<_>>()
                )
                .as_deref(),
                Some(sample.glosses.as_slice()),
                "grammar must be invertible"
            );

            let feat_rel = format!("features/{}.feat", sample.id);
            let comp_rel = format!("features/{}.frame.feat", sample.id);
            let kp_rel = format!("keypoints/{}.kp", sample.id);
            save_features(&out_dir.join(&feat_rel), &sample.features)?;
            save_features(&out_dir.join(&comp_rel), &sample.companions)?;
            KeypointFile::new(sample.frames.clone())?.save(&out_dir.join(&kp_rel))?;

            sentences.push(sample.sentence.clone());
            glosses.push(
                sample.glosses.iter().map(|&g| gloss_label(g)).collect::<Vec<_>>().join(" "),
            );
            entries.push(ManifestEntry {
                sample_id: sample.id,
                feature_path: Some(feat_rel),
                companion_path: Some(comp_rel),
                keypoint_path: Some(kp_rel),
                sentence: sample.sentence,
            });
        }
        let manifest = Manifest { entries, base_dir: out_dir.to_path_buf() };
        manifest.save(&out_dir.join(format!("{}.manifest", split.label())))?;
        write_lines(&out_dir.join(format!("{}.text", split.label())), &sentences)?;
        write_lines(&out_dir.join(format!("{}.gloss", split.label())), &glosses)?;
        offset += count;
    }

    Ok(SynthOutput {
        dir: out_dir.to_path_buf(),
        vocab_path,
        counts: (n_train, n_dev, n_test),
    })
}

fn save_features(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    FeatureFile::new(rows.len(), dim, data)?.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenization::{normalize_keypoints, Grouping, ALL_PARTS};

    fn small_config() -> SynthConfig {
        SynthConfig {
            seed: 5,
            sentences: 20,
            gloss_len_range: (2, 3),
            proto_len_range: (3, 5),
            split_ratios: (0.7, 0.15, 0.15),
            gloss_count: 10,
            function_words: 6,
            feature_dim: 4,
            companion_dim: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn grammar_roundtrip_exhaustive() {
        for k in 1..=5 {
            let mut rng = XorShiftStar::new(k as u64);
            for _ in 0..50 {
                let glosses: Vec<usize> = (0..k).map(|_| rng.next_index(60)).collect();
                let words = gloss_to_sentence(&glosses, 30);
                let recovered = sentence_to_gloss(&words).unwrap();
                assert_eq!(recovered, glosses);
            }
        }
    }

    #[test]
    fn grammar_is_nonmonotonic() {
        let words = gloss_to_sentence(&[1, 2, 3], 30);
        // the final gloss is fronted
        assert_eq!(words[0], "w03");
        assert!(words.iter().any(|w| w.starts_with('f')));
    }

    #[test]
    fn generation_deterministic() {
        let config = small_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&config, d1.path()).unwrap();
        generate(&config, d2.path()).unwrap();
        for rel in ["train.manifest", "train.text", "train.gloss", "vocab.txt"] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs");
        }
        let a = std::fs::read(d1.path().join("features/sample00000.feat")).unwrap();
        let b = std::fs::read(d2.path().join("features/sample00000.feat")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(d1.path().join("keypoints/sample00000.kp")).unwrap();
        let b = std::fs::read(d2.path().join("keypoints/sample00000.kp")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let config = small_config();
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&config, dir.path()).unwrap();
        assert_eq!(out.counts.0 + out.counts.1 + out.counts.2, 20);
        let mut seen = std::collections::HashSet::new();
        for split in SPLITS {
            let manifest = Manifest::load(&out.manifest_path(split)).unwrap();
            for e in manifest.entries {
                assert!(seen.insert(e.sample_id.clone()), "{} in two splits", e.sample_id);
            }
        }
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn zero_noise_zero_garbage_is_exact_prototype_concat() {
        let mut config = small_config();
        config.frame_noise = 0.0;
        config.garbage_prob = 0.0;
        let inventory = GlossInventory::build(&config);
        let sample = render_base(0, &config, &inventory);
        let expected: usize =
            sample.glosses.iter().map(|&g| inventory.prototypes[g].poses.len()).sum();
        assert_eq!(sample.frames.len(), expected);
        assert_eq!(sample.garbage_frames, 0);
        // first frames equal the first prototype's poses exactly
        let first = &inventory.prototypes[sample.glosses[0]];
        assert_eq!(sample.frames[0], first.poses[0]);
        assert_eq!(sample.features[0], first.features[0]);
    }

    #[test]
    fn garbage_rate_concentrates() {
        let mut config = small_config();
        config.sentences = 600;
        config.gloss_len_range = (18, 22);
        config.proto_len_range = (9, 10);
        config.garbage_prob = 0.1;
        config.gloss_count = 8;
        let inventory = GlossInventory::build(&config);
        let mut garbage = 0usize;
        let mut total = 0usize;
        for i in 0..config.sentences {
            let s = render_base(i, &config, &inventory);
            garbage += s.garbage_frames;
            total += s.frames.len();
        }
        assert!(total > 100_000, "need a long corpus, got {total}");
        let rate = garbage as f64 / total as f64;
        assert!((rate - 0.1).abs() < 0.01, "garbage rate {rate}");
    }

    #[test]
    fn domain_shift_identity_when_zero() {
        let mut config = small_config();
        config.languages = 2;
        config.domain_shift = 0.0;
        let inventory = GlossInventory::build(&config);
        let sample = render_base(0, &config, &inventory);
        let shifted = render_domain(&sample, 1, &inventory).unwrap();
        assert_eq!(shifted.frames, sample.frames);
        assert_eq!(shifted.features, sample.features);
    }

    #[test]
    fn unknown_language_rejected() {
        let config = small_config();
        let inventory = GlossInventory::build(&config);
        let sample = render_base(0, &config, &inventory);
        assert!(render_domain(&sample, 3, &inventory).is_err());
    }

    #[test]
    fn keypoint_normalization_cancels_domain_shift() {
        let mut config = small_config();
        config.languages = 2;
        config.domain_shift = 2.0;
        let inventory = GlossInventory::build(&config);
        let sample = render_base(1, &config, &inventory);
        let shifted = render_domain(&sample, 1, &inventory).unwrap();
        for (a, b) in sample.frames.iter().zip(&shifted.frames) {
            let ta = normalize_keypoints(a, Grouping::PerPart, &ALL_PARTS).unwrap();
            let tb = normalize_keypoints(b, Grouping::PerPart, &ALL_PARTS).unwrap();
            for (x, y) in ta.iter().zip(&tb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        // features do move
        let moved = sample.features[0]
            .iter()
            .zip(&shifted.features[0])
            .any(|(a, b)| (a - b).abs() > 0.1);
        assert!(moved);
    }

    #[test]
    fn shifted_feature_domains_linearly_separable() {
        let mut config = small_config();
        config.languages = 2;
        config.domain_shift = 2.0;
        config.sentences = 40;
        let inventory = GlossInventory::build(&config);
        let mut source = Vec::new();
        let mut target = Vec::new();
        for i in 0..config.sentences {
            let base = render_base(i, &config, &inventory);
            let shifted = render_domain(&base, 1, &inventory).unwrap();
            source.extend(base.features.iter().cloned());
            target.extend(shifted.features.iter().cloned());
        }
        // perceptron oracle: a linear separator must reach high accuracy
        let dim = source[0].len();
        let mut w = vec![0.0; dim + 1];
        for _ in 0..40 {
            for (x, y) in source.iter().map(|x| (x, -1.0)).chain(target.iter().map(|x| (x, 1.0))) {
                let score: f64 =
                    w[..dim].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + w[dim];
                if score * y <= 0.0 {
                    for (wi, xi) in w[..dim].iter_mut().zip(x) {
                        *wi += 0.1 * y * xi;
                    }
                    w[dim] += 0.1 * y;
                }
            }
        }
        let mut correct = 0usize;
        let total = source.len() + target.len();
        for (x, y) in source.iter().map(|x| (x, -1.0)).chain(target.iter().map(|x| (x, 1.0))) {
            let score: f64 = w[..dim].iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + w[dim];
            if score * y > 0.0 {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy > 0.95, "separator accuracy {accuracy}");
    }
}
