//! Proposal decoding, non-maximum suppression, sequence confidence and
//! cross-modal fusion.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempseg_tensor::{Graph, Real};

use crate::config::InferConfig;
use crate::error::{Error, Result};
use crate::featio::{FeatureSequence, Modality, Segment};
use crate::heads::{decode_span, TimestepPrediction};
use crate::model::{frames_tensor, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

impl ScoredSegment {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }

    pub fn iou(&self, other: &ScoredSegment) -> f64 {
        self.segment().iou(&other.segment())
    }
}

/// Score descending, then earlier start, then shorter.
pub fn rank_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then((a.end - a.start).total_cmp(&(b.end - b.start)))
}

/// Every valid timestep on every level with `p ≥ pre_nms_threshold`,
/// decoded to seconds, best `pre_nms_topk` kept.
pub fn propose<T: Real>(
    model: &Model<T>,
    seq: &FeatureSequence,
    cfg: &InferConfig,
) -> Result<Vec<ScoredSegment>> {
    let valid = seq.valid_len();
    if valid == 0 {
        return Err(Error::Data(format!("sequence {:?} is empty", seq.id)));
    }
    if seq.dim != model.input_dim() {
        return Err(Error::Data(format!(
            "sequence {:?} has dim {}, model expects {}",
            seq.id,
            seq.dim,
            model.input_dim()
        )));
    }
    let rows = valid.max(model.min_len());
    let padded = seq.pad_or_truncate(rows);
    let fps = f64::from(seq.feature_fps);
    let duration = valid as f64 / fps;

    let mut g = Graph::<T>::new();
    let vars = model.bind(&mut g, false);
    let x = g.constant(frames_tensor(&padded.frames, seq.dim)?);
    let out = model.forward(&mut g, &vars, x, &padded.mask)?;
    let strides = &out.pyramid.strides;
    let mut proposals = Vec::new();
    for (level, mask) in out.pyramid.masks.iter().enumerate() {
        let p = g.value(out.cls[level]).data();
        let r = g.value(out.reg[level]).data();
        for tau in (0..mask.len()).filter(|&i| mask[i]) {
            let score = p[tau].as_f64();
            if score < cfg.pre_nms_threshold {
                continue;
            }
            let pred = TimestepPrediction {
                level,
                tau,
                p: score,
                d_s: r[2 * tau].as_f64(),
                d_e: r[2 * tau + 1].as_f64(),
            };
            proposals.extend(decode_span(&pred, strides, fps, duration));
        }
    }
    proposals.sort_by(rank_order);
    proposals.truncate(cfg.pre_nms_topk);
    Ok(proposals)
}

/// Greedy hard NMS: walk segments in [`rank_order`], keep one iff its IoU
/// with every kept segment is at most `iou_threshold`.
pub fn nms(segments: &[ScoredSegment], iou_threshold: f64, max_outputs: usize) -> Vec<ScoredSegment> {
    let mut order = segments.to_vec();
    order.sort_by(rank_order);
    let mut kept: Vec<ScoredSegment> = Vec::new();
    for s in order {
        if kept.len() >= max_outputs {
            break;
        }
        if kept.iter().all(|k| k.iou(&s) <= iou_threshold) {
            kept.push(s);
        }
    }
    kept
}

/// Highest kept score, or 0.
pub fn sequence_confidence(kept: &[ScoredSegment]) -> f64 {
    kept.iter().map(|s| s.score).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedSegment {
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub modality: Modality,
}

impl TaggedSegment {
    pub fn scored(&self) -> ScoredSegment {
        ScoredSegment {
            start: self.start,
            end: self.end,
            score: self.score,
        }
    }
}

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub confidence: f64,
    pub segments: Vec<TaggedSegment>,
}

impl Prediction {
    pub fn scored(&self) -> Vec<ScoredSegment> {
        self.segments.iter().map(TaggedSegment::scored).collect()
    }
}

/// Full inference for one sequence.
pub fn predict<T: Real>(model: &Model<T>, seq: &FeatureSequence, cfg: &InferConfig) -> Result<Prediction> {
    let proposals = propose(model, seq, cfg)?;
    let kept = nms(&proposals, cfg.nms_iou, cfg.max_outputs);
    Ok(Prediction {
        id: seq.id.clone(),
        confidence: sequence_confidence(&kept),
        segments: kept
            .iter()
            .map(|s| TaggedSegment {
                start: s.start,
                end: s.end,
                score: s.score,
                modality: seq.modality,
            })
            .collect(),
    })
}

/// Confidence is the larger of the two; segments are both lists, audio
/// first, each keeping its modality tag. Overlaps are not merged.
pub fn fuse_modalities(audio: &Prediction, video: &Prediction) -> Result<Prediction> {
    if audio.id != video.id {
        return Err(Error::Data(format!(
            "cannot fuse predictions for different samples: {:?} vs {:?}",
            audio.id, video.id
        )));
    }
    Ok(Prediction {
        id: audio.id.clone(),
        confidence: audio.confidence.max(video.confidence),
        segments: audio.segments.iter().chain(&video.segments).copied().collect(),
    })
}

/// Fuse two prediction sets sample by sample. Both must cover the same ids.
pub fn fuse_sets(audio: &[Prediction], video: &[Prediction]) -> Result<Vec<Prediction>> {
    let missing: Vec<&str> = audio
        .iter()
        .filter(|a| !video.iter().any(|v| v.id == a.id))
        .chain(video.iter().filter(|v| !audio.iter().any(|a| a.id == v.id)))
        .map(|p| p.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "ids present in only one prediction set: {}",
            missing.join(", ")
        )));
    }
    audio
        .iter()
        .map(|a| {
            let v = video.iter().find(|v| v.id == a.id).expect("checked above");
            fuse_modalities(a, v)
        })
        .collect()
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: Prediction = serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("prediction line {}: {e}", i + 1)))?;
            validate_prediction(&p)?;
            Ok(p)
        })
        .collect()
}

fn validate_prediction(p: &Prediction) -> Result<()> {
    let bad = |m: String| Err(Error::Format(format!("prediction {}: {m}", p.id)));
    if !(0.0..=1.0).contains(&p.confidence) {
        return bad(format!("confidence {} outside [0, 1]", p.confidence));
    }
    for s in &p.segments {
        if !(s.end > s.start) || !s.start.is_finite() || !s.end.is_finite() {
            return bad(format!("segment [{}, {}] is not a proper interval", s.start, s.end));
        }
        if !(0.0..=1.0).contains(&s.score) {
            return bad(format!("score {} outside [0, 1]", s.score));
        }
    }
    Ok(())
}

pub fn encode_predictions(preds: &[Prediction]) -> Result<String> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_predictions(preds)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: f64, end: f64, score: f64) -> ScoredSegment {
        ScoredSegment { start, end, score }
    }

    #[test]
    fn disjoint_segments_all_kept_in_score_order() {
        let s = [seg(0.0, 1.0, 0.2), seg(2.0, 3.0, 0.9), seg(4.0, 5.0, 0.5)];
        let k = nms(&s, 0.6, 50);
        assert_eq!(k.iter().map(|s| s.score).collect::<Vec<_>>(), [0.9, 0.5, 0.2]);
    }

    #[test]
    fn identical_segments_keep_the_best() {
        let k = nms(&[seg(0.0, 1.0, 0.8), seg(0.0, 1.0, 0.9)], 0.6, 50);
        assert_eq!(k, vec![seg(0.0, 1.0, 0.9)]);
    }

    #[test]
    fn max_outputs_caps() {
        let s: Vec<_> = (0..10).map(|i| seg(i as f64, i as f64 + 0.5, 0.5)).collect();
        let k = nms(&s, 0.6, 3);
        assert_eq!(k.len(), 3);
        assert_eq!(k[0].start, 0.0);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(sequence_confidence(&[]), 0.0);
        assert_eq!(sequence_confidence(&[seg(0.0, 1.0, 0.3), seg(1.0, 2.0, 0.7)]), 0.7);
    }

    #[test]
    fn prediction_format() {
        let line = r#"{"id":"a","confidence":0.5,"segments":[{"start":0.0,"end":1.0,"score":0.5,"modality":"video"}]}"#;
        let p = parse_predictions(line).unwrap();
        assert_eq!(p[0].segments[0].modality, Modality::Video);
        assert_eq!(encode_predictions(&p).unwrap().trim_end(), line);
        assert!(parse_predictions(r#"{"id":"a","confidence":2.0,"segments":[]}"#).is_err());
    }

    #[test]
    fn fusion_requires_matching_ids() {
        let a = Prediction { id: "a".into(), confidence: 0.9, segments: vec![] };
        let b = Prediction { id: "b".into(), confidence: 0.2, segments: vec![] };
        assert!(fuse_modalities(&a, &b).is_err());
        let err = fuse_sets(&[a.clone()], &[b]).unwrap_err().to_string();
        assert!(err.contains("a") && err.contains("b"));
    }
}
