//! Feature sequences, their on-disk formats, and the synthetic generator.
//!
//! Feature file layout (little-endian): magic `TFF1`, `u8` modality tag,
//! `u32` dim, `f32` features per second, `u32` valid length, then
//! `valid_len × dim` `f32` values row-major. Padding is never stored.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"TFF1";
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
    Synthetic,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Video => 1,
            Modality::Synthetic => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Audio),
            1 => Some(Modality::Video),
            2 => Some(Modality::Synthetic),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            "synthetic" => Ok(Modality::Synthetic),
            _ => Err(Error::Config(format!(
                "unknown modality {s:?} (audio, video, synthetic)"
            ))),
        }
    }
}

/// Raw-time geometry of a frame-level encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderGeometry {
    /// Receptive length of one feature, in raw-time units.
    pub receptive: u64,
    /// Hop between consecutive features, in raw-time units.
    pub stride: u64,
    /// Raw-time units per second.
    pub rate: f64,
}

impl EncoderGeometry {
    pub fn new(receptive: u64, stride: u64, rate: f64) -> Result<Self> {
        if receptive < 1 || stride < 1 || !(rate > 0.0) {
            return Err(Error::Config(format!(
                "encoder geometry needs receptive >= 1, stride >= 1, rate > 0; got {receptive}, {stride}, {rate}"
            )));
        }
        Ok(Self {
            receptive,
            stride,
            rate,
        })
    }

    /// Number of features produced for `raw_len` raw-time units; zero when
    /// the input is shorter than one receptive field.
    pub fn feature_count(&self, raw_len: u64) -> u64 {
        if raw_len < self.receptive {
            0
        } else {
            (raw_len - self.receptive) / self.stride + 1
        }
    }
}

/// Fixed-rate embedding matrix with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub modality: Modality,
    pub dim: usize,
    pub feature_fps: f32,
    /// `rows × dim`, row-major.
    pub frames: Vec<f32>,
    /// `true` for valid rows; always a true-prefix of length `rows`.
    pub mask: Vec<bool>,
}

impl FeatureSequence {
    /// Unpadded sequence from `valid_len × dim` frames.
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        dim: usize,
        feature_fps: f32,
        frames: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dim must be >= 1".into()));
        }
        if frames.len() % dim != 0 {
            return Err(Error::Format(format!(
                "{} values is not a whole number of {dim}-dim rows",
                frames.len()
            )));
        }
        if !(feature_fps > 0.0) || !feature_fps.is_finite() {
            return Err(Error::Format(format!("invalid feature rate {feature_fps}")));
        }
        let rows = frames.len() / dim;
        Ok(Self {
            id: id.into(),
            modality,
            dim,
            feature_fps,
            frames,
            mask: vec![true; rows],
        })
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    /// Duration covered by the valid frames, in seconds.
    pub fn duration(&self) -> f64 {
        self.valid_len() as f64 / f64::from(self.feature_fps)
    }

    /// Exactly `m_max` rows: extra valid rows are dropped, missing rows are
    /// zero-filled and masked out.
    pub fn pad_or_truncate(&self, m_max: usize) -> Self {
        let keep = self.valid_len().min(m_max);
        let mut frames = self.frames[..keep * self.dim].to_vec();
        frames.resize(m_max * self.dim, 0.0);
        let mut mask = vec![true; keep];
        mask.resize(m_max, false);
        Self {
            frames,
            mask,
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let valid = self.valid_len();
        let mut out = Vec::with_capacity(HEADER_LEN + valid * self.dim * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.push(self.modality.tag());
        out.extend_from_slice(&u32_field(self.dim, "dim")?.to_le_bytes());
        out.extend_from_slice(&self.feature_fps.to_le_bytes());
        out.extend_from_slice(&u32_field(valid, "valid_len")?.to_le_bytes());
        for v in &self.frames[..valid * self.dim] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parse a feature file. Allocation is bounded by the input length.
    pub fn decode(bytes: &[u8], id: impl Into<String>) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        let modality = Modality::from_tag(bytes[4])
            .ok_or_else(|| Error::Format(format!("unknown modality tag {}", bytes[4])))?;
        let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let fps = f32::from_le_bytes(bytes[9..13].try_into().unwrap());
        let valid_len = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        let expected = valid_len
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        if payload.len() < expected {
            return Err(Error::Format(format!(
                "truncated payload: header declares {valid_len} rows of dim {dim}, file holds {} bytes",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::Format(format!(
                "dim mismatch vs header: {} payload bytes for {valid_len} rows of dim {dim}",
                payload.len()
            )));
        }
        let frames = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(id, modality, dim, fps, frames)
    }
}

fn u32_field(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit the format")))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::decode(&bytes, id)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn store_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.encode()?).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Temporal intersection over union.
    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        let union = self.len() + other.len() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Forged intervals of one sample, in seconds. Empty means genuine.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn is_genuine(&self) -> bool {
        self.segments.is_empty()
    }

    /// Ground-truth invariants: positive lengths, sorted, non-overlapping,
    /// inside `[0, duration]`.
    pub fn validate(&self, duration: f64) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.start >= 0.0) || !(s.end > s.start) || !(s.end <= duration) {
                return Err(Error::Data(format!(
                    "segment [{}, {}] invalid for duration {duration}",
                    s.start, s.end
                )));
            }
            if i > 0 && self.segments[i - 1].end > s.start {
                return Err(Error::Data(format!(
                    "segments overlap or are unsorted at [{}, {}]",
                    s.start, s.end
                )));
            }
        }
        Ok(())
    }
}

/// One line of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub duration: f64,
    pub segments: SegmentSet,
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("annotation line {}: {e}", i + 1)))?;
        a.segments
            .validate(a.duration)
            .map_err(|e| Error::Data(format!("annotation {}: {e}", a.id)))?;
        out.push(a);
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_annotations(&text)
}

pub fn write_annotations(path: impl AsRef<Path>, annotations: &[Annotation]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for a in annotations {
        serde_json::to_writer(&mut out, a)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// One entry of a manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub features: String,
    pub annotations_id: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
}

/// A manifest joined with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub feature_path: PathBuf,
    pub annotation: Annotation,
    pub modality: Modality,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    /// Read a manifest and resolve every entry against `annotations_path`.
    /// Feature paths are relative to the manifest's directory.
    pub fn load(manifest_path: &Path, annotations_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let entries = parse_manifest(&text)?;
        let annotations = read_annotations(annotations_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let annotation = annotations
                .iter()
                .find(|a| a.id == e.annotations_id)
                .cloned()
                .ok_or_else(|| {
                    Error::Data(format!("no annotation with id {:?}", e.annotations_id))
                })?;
            let feature_path = base.join(&e.features);
            let modality = read_modality(&feature_path)?;
            out.push(DatasetEntry {
                feature_path,
                annotation,
                modality,
            });
        }
        Ok(Self { entries: out })
    }
}

fn read_modality(path: &Path) -> Result<Modality> {
    use std::io::Read;
    let mut head = [0u8; 5];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if &head[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    Modality::from_tag(head[4])
        .ok_or_else(|| Error::Format(format!("{}: unknown modality tag", path.display())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub duration_sec: f64,
    pub dim: usize,
    pub feature_fps: f64,
    /// Number of planted segments, `0..=3`.
    pub n_forged: usize,
    pub shift_magnitude: f64,
    /// Upper bound on the generated length in frames.
    pub m_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_sec: 10.0,
            dim: 16,
            feature_fps: 25.0,
            n_forged: 1,
            shift_magnitude: 1.5,
            m_max: 1024,
        }
    }
}

pub const MIN_SEGMENT_SEC: f64 = 0.2;
pub const MAX_SEGMENT_FRACTION: f64 = 0.4;
const NOISE_SCALE: f32 = 1.5;
const SMOOTHING: usize = 5;
const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub sequence: FeatureSequence,
    pub segments: SegmentSet,
    /// Planted `[start, end)` frame ranges, sorted.
    pub placements: Vec<(usize, usize)>,
}

/// Draw one sample: smoothed Gaussian background with `n_forged` planted
/// segments, each a per-dimension mean shift of `±shift_magnitude` plus
/// inflated noise.
pub fn synth_sample(seed: u64, id: impl Into<String>, cfg: &SynthConfig) -> Result<SynthSample> {
    let frames = (cfg.duration_sec * cfg.feature_fps).round() as usize;
    if cfg.dim == 0 || frames == 0 {
        return Err(Error::Config("synthetic sample needs dim >= 1 and at least one frame".into()));
    }
    if frames > cfg.m_max {
        return Err(Error::Config(format!(
            "duration·fps = {frames} frames exceeds m_max {}",
            cfg.m_max
        )));
    }
    if cfg.n_forged > 3 {
        return Err(Error::Config("n_forged must be in 0..=3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placements = place_segments(&mut rng, frames, cfg)?;

    let raw: Vec<f32> = (0..(frames + SMOOTHING - 1) * cfg.dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut data = vec![0f32; frames * cfg.dim];
    for t in 0..frames {
        for d in 0..cfg.dim {
            let s: f32 = (0..SMOOTHING).map(|k| raw[(t + k) * cfg.dim + d]).sum();
            data[t * cfg.dim + d] = s / SMOOTHING as f32;
        }
    }
    for &(a, b) in &placements {
        let shift: Vec<f32> = (0..cfg.dim)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (sign * cfg.shift_magnitude) as f32
            })
            .collect();
        for t in a..b {
            for (v, &s) in data[t * cfg.dim..(t + 1) * cfg.dim].iter_mut().zip(&shift) {
                *v = *v * NOISE_SCALE + s;
            }
        }
    }
    let fps = cfg.feature_fps;
    let segments = SegmentSet::new(
        placements
            .iter()
            .map(|&(a, b)| Segment::new(a as f64 / fps, b as f64 / fps))
            .collect(),
    );
    let sequence = FeatureSequence::new(id, Modality::Synthetic, cfg.dim, fps as f32, data)?;
    Ok(SynthSample {
        sequence,
        segments,
        placements,
    })
}

fn place_segments(
    rng: &mut ChaCha8Rng,
    frames: usize,
    cfg: &SynthConfig,
) -> Result<Vec<(usize, usize)>> {
    if cfg.n_forged == 0 {
        return Ok(Vec::new());
    }
    let min_len = (MIN_SEGMENT_SEC * cfg.feature_fps).ceil().max(1.0) as usize;
    let max_len = (MAX_SEGMENT_FRACTION * frames as f64).floor() as usize;
    if max_len < min_len {
        return Err(Error::Config(format!(
            "sequence of {frames} frames too short for a {min_len}-frame segment"
        )));
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut spans: Vec<(usize, usize)> = (0..cfg.n_forged)
            .map(|_| {
                let len = rng.random_range(min_len..=max_len);
                let start = rng.random_range(0..=frames - len);
                (start, start + len)
            })
            .collect();
        spans.sort_unstable();
        // Require a gap of at least one genuine frame between segments.
        if spans.windows(2).all(|w| w[0].1 < w[1].0) {
            return Ok(spans);
        }
    }
    Err(Error::Data(format!(
        "could not place {} disjoint segments in {frames} frames after {PLACEMENT_ATTEMPTS} attempts",
        cfg.n_forged
    )))
}

/// A synthetic split: `genuine_fraction` of samples carry no segment, the
/// rest carry 1–3. Sample `i` uses a seed derived from `(seed, i)`.
pub fn synth_dataset(
    n: usize,
    seed: u64,
    base: &SynthConfig,
    genuine_fraction: f64,
) -> Result<Vec<SynthSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_genuine = (genuine_fraction * n as f64).round() as usize;
    let mut forged_counts: Vec<usize> = (0..n)
        .map(|i| if i < n_genuine { 0 } else { rng.random_range(1..=3) })
        .collect();
    forged_counts.shuffle(&mut rng);
    forged_counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let cfg = SynthConfig {
                n_forged: k,
                ..base.clone()
            };
            let sample_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            synth_sample(sample_seed, format!("s{seed}_{i:05}"), &cfg)
        })
        .collect()
}
