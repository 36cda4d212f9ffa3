//! Shared classification and regression heads, span decoding and training
//! target assignment.

use tempseg_tensor::{Graph, Real, Var};

use crate::backbone::{to_raw_index, Linear, NormParams, Pyramid, LN_EPS};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::featio::{Segment, SegmentSet};
use crate::infer::ScoredSegment;

/// Three kernel-3 convolutions, the first two followed by LayerNorm + ReLU.
#[derive(Clone, Copy, Debug)]
pub struct HeadParams<H> {
    pub conv1: Linear<H>,
    pub ln1: NormParams<H>,
    pub conv2: Linear<H>,
    pub ln2: NormParams<H>,
    pub out: Linear<H>,
}

impl<H: Copy> HeadParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> HeadParams<U> {
        HeadParams {
            conv1: self.conv1.map(f),
            ln1: self.ln1.map(f),
            conv2: self.conv2.map(f),
            ln2: self.ln2.map(f),
            out: self.out.map(f),
        }
    }
}

fn head_trunk<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    mask: &[bool],
    p: &HeadParams<Var>,
) -> Result<Var> {
    let mut h = x;
    for (conv, ln) in [(&p.conv1, &p.ln1), (&p.conv2, &p.ln2)] {
        h = g.conv1d(h, conv.w, Some(conv.b), 1, 1)?;
        h = g.layer_norm(h, ln.gamma, ln.beta, T::of(LN_EPS))?;
        h = g.relu(h)?;
        h = g.masked_fill(h, mask, T::zero())?;
    }
    Ok(g.conv1d(h, p.out.w, Some(p.out.b), 1, 1)?)
}

/// Per-level forgery probabilities, `[len_i, 1]` each.
pub fn classify<T: Real>(
    g: &mut Graph<T>,
    pyramid: &Pyramid,
    p: &HeadParams<Var>,
) -> Result<Vec<Var>> {
    pyramid
        .levels
        .iter()
        .zip(&pyramid.masks)
        .map(|(&x, mask)| {
            let logits = head_trunk(g, x, mask, p)?;
            Ok(g.sigmoid(logits)?)
        })
        .collect()
}

/// Per-level `(d_s, d_e)` offsets in level-stride units, `[len_i, 2]` each.
pub fn regress<T: Real>(
    g: &mut Graph<T>,
    pyramid: &Pyramid,
    p: &HeadParams<Var>,
) -> Result<Vec<Var>> {
    pyramid
        .levels
        .iter()
        .zip(&pyramid.masks)
        .map(|(&x, mask)| {
            let raw = head_trunk(g, x, mask, p)?;
            Ok(g.relu(raw)?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimestepPrediction {
    pub level: usize,
    pub tau: usize,
    pub p: f64,
    pub d_s: f64,
    pub d_e: f64,
}

/// Turn one timestep's offsets into a span in seconds, clamped to
/// `[0, duration]`. Returns `None` for a degenerate span.
pub fn decode_span(
    pred: &TimestepPrediction,
    strides: &[usize],
    feature_fps: f64,
    duration: f64,
) -> Option<ScoredSegment> {
    let s = strides[pred.level] as f64;
    let t = to_raw_index(pred.tau, strides[pred.level]) as f64;
    let start = ((t - pred.d_s * s) / feature_fps).clamp(0.0, duration);
    let end = ((t + pred.d_e * s) / feature_fps).clamp(0.0, duration);
    (end > start).then_some(ScoredSegment {
        start,
        end,
        score: pred.p,
    })
}

/// Per-level `[lo, hi)` intervals of segment length in level-0 feature
/// units. Together they partition `[0, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionRanges {
    bounds: Vec<f64>,
}

impl RegressionRanges {
    /// From interior boundaries, which must be positive and increasing.
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.iter().any(|b| !(b.is_finite() && *b > 0.0))
            || bounds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(format!(
                "regression range boundaries must be positive and increasing: {bounds:?}"
            )));
        }
        Ok(Self { bounds })
    }

    /// `[0,64), [64,128), …` doubling per level, last level open-ended.
    pub fn powers_of_two(n_levels: usize) -> Self {
        Self {
            bounds: (1..n_levels).map(|i| 64.0 * 2f64.powi(i as i32 - 1)).collect(),
        }
    }

    pub fn for_model(cfg: &ModelConfig) -> Result<Self> {
        if cfg.regression_ranges.is_empty() {
            Ok(Self::powers_of_two(cfg.n_levels))
        } else {
            Self::new(cfg.regression_ranges.clone())
        }
    }

    pub fn n_levels(&self) -> usize {
        self.bounds.len() + 1
    }

    pub fn range(&self, level: usize) -> (f64, f64) {
        let lo = if level == 0 { 0.0 } else { self.bounds[level - 1] };
        let hi = self.bounds.get(level).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// The unique level whose range holds `len`.
    pub fn level_of(&self, len: f64) -> usize {
        self.bounds.iter().take_while(|&&b| b <= len).count()
    }
}

/// Targets for one pyramid level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelTargets {
    pub labels: Vec<bool>,
    /// Ground-truth offsets in level-stride units (zero on negatives).
    pub d_s: Vec<f64>,
    pub d_e: Vec<f64>,
    /// The segment each positive is assigned to.
    pub assigned: Vec<Option<Segment>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Targets {
    pub levels: Vec<LevelTargets>,
}

impl Targets {
    pub fn n_positive(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.labels.iter().filter(|&&b| b).count())
            .sum()
    }
}

/// Label every valid timestep of every level. A timestep is positive when
/// its feature-grid position, in seconds, lies inside a segment whose length
/// (in feature units) belongs to that level's range. Among several such
/// segments the shortest wins.
pub fn assign_targets(
    segments: &SegmentSet,
    masks: &[Vec<bool>],
    strides: &[usize],
    feature_fps: f64,
    ranges: &RegressionRanges,
) -> Result<Targets> {
    if masks.len() != strides.len() || ranges.n_levels() != masks.len() {
        return Err(Error::Config(format!(
            "{} level masks, {} strides, {} regression ranges",
            masks.len(),
            strides.len(),
            ranges.n_levels()
        )));
    }
    let mut by_len: Vec<&Segment> = segments.segments.iter().collect();
    by_len.sort_by(|a, b| a.len().total_cmp(&b.len()));
    let levels = masks
        .iter()
        .zip(strides)
        .enumerate()
        .map(|(level, (mask, &stride))| {
            let n = mask.len();
            let mut out = LevelTargets {
                labels: vec![false; n],
                d_s: vec![0.0; n],
                d_e: vec![0.0; n],
                assigned: vec![None; n],
            };
            let (lo, hi) = ranges.range(level);
            let s = stride as f64;
            for tau in (0..n).filter(|&i| mask[i]) {
                let t = to_raw_index(tau, stride) as f64;
                let sec = t / feature_fps;
                let hit = by_len.iter().find(|seg| {
                    let len = seg.len() * feature_fps;
                    sec >= seg.start && sec <= seg.end && len >= lo && len < hi
                });
                if let Some(seg) = hit {
                    out.labels[tau] = true;
                    // `start·fps` can land a hair past `t` after rounding.
                    out.d_s[tau] = ((t - seg.start * feature_fps) / s).max(0.0);
                    out.d_e[tau] = ((seg.end * feature_fps - t) / s).max(0.0);
                    out.assigned[tau] = Some(**seg);
                }
            }
            out
        })
        .collect();
    Ok(Targets { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(level: usize, tau: usize, d_s: f64, d_e: f64) -> TimestepPrediction {
        TimestepPrediction {
            level,
            tau,
            p: 0.5,
            d_s,
            d_e,
        }
    }

    #[test]
    fn decode_examples() {
        let s = decode_span(&pred(0, 10, 2.0, 3.0), &[1], 50.0, 10.0).unwrap();
        assert!((s.start - 0.16).abs() < 1e-12 && (s.end - 0.26).abs() < 1e-12);
        assert!(decode_span(&pred(0, 10, 0.0, 0.0), &[1], 50.0, 10.0).is_none());
        let s = decode_span(&pred(0, 1, 100.0, 1.0), &[1], 50.0, 10.0).unwrap();
        assert_eq!(s.start, 0.0);
        let s = decode_span(&pred(0, 499, 1.0, 100.0), &[1], 50.0, 10.0).unwrap();
        assert_eq!(s.end, 10.0);
    }

    #[test]
    fn default_ranges_partition() {
        let r = RegressionRanges::powers_of_two(5);
        assert_eq!(r.range(0), (0.0, 64.0));
        assert_eq!(r.range(4), (512.0, f64::INFINITY));
        for (len, level) in [(0.0, 0), (63.9, 0), (64.0, 1), (600.0, 4), (1e9, 4)] {
            assert_eq!(r.level_of(len), level);
        }
        assert_eq!(RegressionRanges::powers_of_two(1).range(0), (0.0, f64::INFINITY));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(RegressionRanges::new(vec![10.0, 5.0]).is_err());
        assert!(RegressionRanges::new(vec![0.0]).is_err());
    }

    #[test]
    fn genuine_sample_has_no_positives() {
        let t = assign_targets(
            &SegmentSet::default(),
            &[vec![true; 8]],
            &[1],
            25.0,
            &RegressionRanges::powers_of_two(1),
        )
        .unwrap();
        assert_eq!(t.n_positive(), 0);
    }
}
