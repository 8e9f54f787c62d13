//! Tokenization: every pathway from a recorded sign video to the vector
//! sequence consumed by the translation model.
//!
//! Inputs arrive as files, either human keypoints (body and hand joints
//! with confidences) or precomputed per-frame feature embeddings. The
//! pathways are: standard-normalized keypoint coordinates per body part,
//! raw feature rows, feature rows concatenated with a companion stream,
//! and non-overlapping clip windows pooled to one token each. Sequences
//! may be reversed after tokenization.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"SSEQ";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_CLIP_WINDOW: usize = 8;

// ---------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Body-part groups, in manifest order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BodyPart {
    Body,
    RightHand,
    LeftHand,
}

pub const ALL_PARTS: [BodyPart; 3] = [BodyPart::Body, BodyPart::RightHand, BodyPart::LeftHand];

impl BodyPart {
    pub fn label(self) -> &'static str {
        match self {
            BodyPart::Body => "body",
            BodyPart::RightHand => "right",
            BodyPart::LeftHand => "left",
        }
    }

    pub fn parse(s: &str) -> Result<BodyPart> {
        match s {
            "body" => Ok(BodyPart::Body),
            "right" => Ok(BodyPart::RightHand),
            "left" => Ok(BodyPart::LeftHand),
            other => Err(Error::Config(format!("unknown body part {other:?}"))),
        }
    }
}

/// One frame of detected keypoints, grouped by body part.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointFrame {
    pub body: Vec<Joint>,
    pub right: Vec<Joint>,
    pub left: Vec<Joint>,
}

impl KeypointFrame {
    pub fn group(&self, part: BodyPart) -> &[Joint] {
        match part {
            BodyPart::Body => &self.body,
            BodyPart::RightHand => &self.right,
            BodyPart::LeftHand => &self.left,
        }
    }

    pub fn group_mut(&mut self, part: BodyPart) -> &mut Vec<Joint> {
        match part {
            BodyPart::Body => &mut self.body,
            BodyPart::RightHand => &mut self.right,
            BodyPart::LeftHand => &mut self.left,
        }
    }
}

/// Ordered token vectors, the interface between tokenization and the
/// translation model.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Vec<f64>>,
    pub source_id: String,
    pub reversed: bool,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Vec<f64>>, source_id: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("token sequence must contain at least one token".into()));
        }
        let dim = tokens[0].len();
        if tokens.iter().any(|t| t.len() != dim) {
            return Err(Error::Data("token vectors differ in dimension".into()));
        }
        Ok(TokenSequence { tokens, source_id: source_id.into(), reversed: false })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].len()
    }

    /// Z x d matrix of the tokens.
    pub fn to_matrix(&self) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.len() * d);
        for t in &self.tokens {
            data.extend_from_slice(t);
        }
        Tensor::new(vec![self.len(), d], data).expect("consistent token dims")
    }
}

/// Token order reversed, reversed flag toggled. Applying twice is the
/// identity.
pub fn reverse_tokens(seq: &TokenSequence) -> TokenSequence {
    let mut tokens = seq.tokens.clone();
    tokens.reverse();
    TokenSequence { tokens, source_id: seq.source_id.clone(), reversed: !seq.reversed }
}

// ---------------------------------------------------------------------
// Keypoint normalization
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    PerPart,
    WholeFrame,
}

/// Standard-normalize a frame's coordinates.
///
/// Per group (or pooled over the whole frame), x and y coordinates are
/// separately shifted to mean zero and scaled to unit population standard
/// deviation; a zero-variance group maps to zeros. The output is the
/// concatenation [T_x ; T_y] per group in manifest order. Confidences are
/// carried in the files but take no part in normalization.
pub fn normalize_keypoints(
    frame: &KeypointFrame,
    grouping: Grouping,
    parts: &[BodyPart],
) -> Result<Vec<f64>> {
    let parts = ordered_parts(parts)?;
    for &part in &parts {
        if frame.group(part).is_empty() {
            return Err(Error::Data(format!("empty keypoint group {:?}", part.label())));
        }
    }
    match grouping {
        Grouping::PerPart => {
            let mut out = Vec::new();
            for &part in &parts {
                let joints = frame.group(part);
                let xs: Vec<f64> = joints.iter().map(|j| j.x).collect();
                let ys: Vec<f64> = joints.iter().map(|j| j.y).collect();
                out.extend(standardize(&xs));
                out.extend(standardize(&ys));
            }
            Ok(out)
        }
        Grouping::WholeFrame => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &part in &parts {
                for j in frame.group(part) {
                    xs.push(j.x);
                    ys.push(j.y);
                }
            }
            let mut out = standardize(&xs);
            out.extend(standardize(&ys));
            Ok(out)
        }
    }
}

/// (v - mean) / population sigma; all zeros when sigma is zero.
fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / sigma).collect()
    }
}

fn ordered_parts(parts: &[BodyPart]) -> Result<Vec<BodyPart>> {
    if parts.is_empty() {
        return Err(Error::Data("no body parts selected".into()));
    }
    let mut ordered: Vec<BodyPart> =
        ALL_PARTS.iter().copied().filter(|p| parts.contains(p)).collect();
    ordered.dedup();
    Ok(ordered)
}

/// One token per frame: concatenated per-part normalized coordinates.
pub fn tokenize_keypoints(
    frames: &[KeypointFrame],
    parts: &[BodyPart],
    source_id: &str,
) -> Result<TokenSequence> {
    if frames.is_empty() {
        return Err(Error::Data(format!("{source_id}: no keypoint frames")));
    }
    let tokens = frames
        .iter()
        .map(|f| normalize_keypoints(f, Grouping::PerPart, parts))
        .collect::<Result<Vec<_>>>()?;
    TokenSequence::new(tokens, source_id)
}

// ---------------------------------------------------------------------
// Feature tokenization
// ---------------------------------------------------------------------

/// Precomputed per-frame embeddings: N rows of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub frames: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureFile {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Data("feature file must have positive frame count and dim".into()));
        }
        if data.len() != frames * dim {
            return Err(Error::Data(format!(
                "feature payload holds {} values, header wants {}",
                data.len(),
                frames * dim
            )));
        }
        Ok(FeatureFile { frames, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn load(path: &Path) -> Result<FeatureFile> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = ByteReader::new(&bytes, path);
        r.expect_magic(FEATURE_MAGIC)?;
        let _version = r.u16()?;
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let data = r.f32_slice(frames * dim)?;
        r.expect_end()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path.display().to_string(), "non-finite feature value"));
        }
        FeatureFile::new(frames, dim, data)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(14 + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        write_file(path, &out)
    }
}

/// Token i = feature row i, or [row_i ; companion_i] when a companion
/// stream is given.
pub fn tokenize_features(
    file: &FeatureFile,
    companion: Option<&FeatureFile>,
    source_id: &str,
) -> Result<TokenSequence> {
    if let Some(c) = companion {
        if c.frames != file.frames {
            return Err(Error::Data(format!(
                "{source_id}: companion frame count {} differs from {}",
                c.frames, file.frames
            )));
        }
    }
    let tokens = (0..file.frames)
        .map(|i| {
            let mut t = file.row(i).to_vec();
            if let Some(c) = companion {
                t.extend_from_slice(c.row(i));
            }
            t
        })
        .collect();
    TokenSequence::new(tokens, source_id)
}

// ---------------------------------------------------------------------
// Clip tokenization
// ---------------------------------------------------------------------

/// How a clip window becomes one token.
///
/// The full aggregator is mean-pooling followed by a learned linear map;
/// during training the map lives in the model parameters so it receives
/// gradients, so `MeanPool` is the variant used on the data path.
#[derive(Debug, Clone)]
pub enum ClipAggregator {
    MeanPool,
    /// Frozen affine map applied after pooling: token = pooled * weight + bias.
    Linear { weight: Tensor, bias: Vec<f64> },
}

/// One token per non-overlapping window of `window` consecutive frames;
/// the last window may be short. Z = ceil(N / window).
pub fn clip_tokenize(
    file: &FeatureFile,
    window: usize,
    aggregator: &ClipAggregator,
    source_id: &str,
) -> Result<TokenSequence> {
    if window == 0 {
        return Err(Error::Config("clip window must be positive".into()));
    }
    let mut tokens = Vec::with_capacity(file.frames.div_ceil(window));
    let mut start = 0;
    while start < file.frames {
        let end = (start + window).min(file.frames);
        let mut pooled = vec![0.0; file.dim];
        for i in start..end {
            for (p, v) in pooled.iter_mut().zip(file.row(i)) {
                *p += v;
            }
        }
        let count = (end - start) as f64;
        pooled.iter_mut().for_each(|p| *p /= count);
        let token = match aggregator {
            ClipAggregator::MeanPool => pooled,
            ClipAggregator::Linear { weight, bias } => {
                let row = Tensor::row(pooled);
                let mapped = matmul(&row, weight)?;
                mapped.data().iter().zip(bias).map(|(v, b)| v + b).collect()
            }
        };
        tokens.push(token);
        start = end;
    }
    TokenSequence::new(tokens, source_id)
}

// ---------------------------------------------------------------------
// Keypoint files
// ---------------------------------------------------------------------

/// Keypoint recording: the feature header plus per-group joint counts,
/// then (x, y, confidence) per joint per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFile {
    pub joint_counts: [usize; 3],
    pub frames: Vec<KeypointFrame>,
}

impl KeypointFile {
    pub fn new(frames: Vec<KeypointFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data("keypoint file must contain at least one frame".into()));
        }
        let counts = [frames[0].body.len(), frames[0].right.len(), frames[0].left.len()];
        for f in &frames {
            if [f.body.len(), f.right.len(), f.left.len()] != counts {
                return Err(Error::Data("joint counts differ across frames".into()));
            }
        }
        Ok(KeypointFile { joint_counts: counts, frames })
    }

    fn values_per_frame(&self) -> usize {
        3 * self.joint_counts.iter().sum::<usize>()
    }

    pub fn load(path: &Path) -> Result<KeypointFile> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = ByteReader::new(&bytes, path);
        r.expect_magic(FEATURE_MAGIC)?;
        let _version = r.u16()?;
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let counts = [r.u16()? as usize, r.u16()? as usize, r.u16()? as usize];
        let per_frame = 3 * counts.iter().sum::<usize>();
        if dim != per_frame {
            return Err(Error::format(
                path.display().to_string(),
                format!("header dim {dim} does not match joint counts {counts:?}"),
            ));
        }
        let values = r.f32_slice(frames * per_frame)?;
        r.expect_end()?;
        let mut out = Vec::with_capacity(frames);
        let mut it = values.into_iter();
        for _ in 0..frames {
            let mut frame = KeypointFrame::default();
            for (part, &count) in ALL_PARTS.iter().zip(&counts) {
                let group = frame.group_mut(*part);
                for _ in 0..count {
                    let (x, y, confidence) = (
                        it.next().unwrap(),
                        it.next().unwrap(),
                        it.next().unwrap(),
                    );
                    if !x.is_finite() || !y.is_finite() {
                        return Err(Error::format(
                            path.display().to_string(),
                            "non-finite keypoint coordinate",
                        ));
                    }
                    if !(0.0..=1.0).contains(&confidence) {
                        return Err(Error::format(
                            path.display().to_string(),
                            format!("confidence {confidence} outside [0, 1]"),
                        ));
                    }
                    group.push(Joint { x, y, confidence });
                }
            }
            out.push(frame);
        }
        KeypointFile::new(out).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.values_per_frame() as u32).to_le_bytes());
        for &c in &self.joint_counts {
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        for frame in &self.frames {
            for part in ALL_PARTS {
                for j in frame.group(part) {
                    out.extend_from_slice(&(j.x as f32).to_le_bytes());
                    out.extend_from_slice(&(j.y as f32).to_le_bytes());
                    out.extend_from_slice(&(j.confidence as f32).to_le_bytes());
                }
            }
        }
        write_file(path, &out)
    }
}

// ---------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------

/// One record per line: sample_id, feature path, optional companion path,
/// optional keypoint path, target sentence, tab-separated. Absent paths
/// are written as "-". Paths are stored as written and resolved against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub feature_path: Option<String>,
    pub companion_path: Option<String>,
    pub keypoint_path: Option<String>,
    pub sentence: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory all relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("line {}: expected 5 tab-separated fields, got {}", lineno + 1, fields.len()),
                ));
            }
            entries.push(ManifestEntry {
                sample_id: fields[0].to_string(),
                feature_path: opt_field(fields[1]),
                companion_path: opt_field(fields[2]),
                keypoint_path: opt_field(fields[3]),
                sentence: fields[4].to_string(),
            });
        }
        Ok(Manifest { entries, base_dir })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.sample_id,
                e.feature_path.as_deref().unwrap_or("-"),
                e.companion_path.as_deref().unwrap_or("-"),
                e.keypoint_path.as_deref().unwrap_or("-"),
                e.sentence
            ));
        }
        write_file(path, text.as_bytes())
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn opt_field(s: &str) -> Option<String> {
    if s == "-" || s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

// ---------------------------------------------------------------------
// Binary helpers
// ---------------------------------------------------------------------

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        ByteReader { bytes, pos: 0, path: path.display().to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(&self.path, "truncated file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(&self.path, "bad magic bytes"));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                &self.path,
                format!("{} trailing bytes after payload", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_slice(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read an entire text file into lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().map(String::from).collect())
}

/// Write lines with trailing newline each.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}
