//! Detection and localisation scores: ROC-AUC, AP@tIoU, AR@K and the
//! weighted combined score.

use std::collections::HashMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::featio::{Annotation, Segment};
use crate::infer::{rank_order, Prediction, ScoredSegment};

pub const AP_TIOUS: [f64; 4] = [0.5, 0.75, 0.9, 0.95];
pub const AR_KS: [usize; 4] = [30, 20, 10, 5];
/// Weights of AP@{.5,.75,.9,.95} then AR@{30,20,10,5}, in sixteenths.
pub const WEIGHTS: [u32; 8] = [1, 2, 2, 3, 1, 2, 2, 3];
const _: () = {
    let mut s = 0;
    let mut i = 0;
    while i < WEIGHTS.len() {
        s += WEIGHTS[i];
        i += 1;
    }
    assert!(s == 16);
};

/// `0.50, 0.55, …, 0.95`.
pub fn recall_tious() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Probability that a forged sample outscores a genuine one, ties counting
/// one half.
pub fn roc_auc(pairs: &[(f64, bool)]) -> Result<f64> {
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "AUC undefined: {pos} forged and {neg} genuine samples"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Count, for every forged sample, the genuine ones strictly below it
    // plus half of those tied with it.
    let mut wins = 0.0;
    let mut below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut tie_pos, mut tie_neg) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tie_pos += 1;
            } else {
                tie_neg += 1;
            }
            j += 1;
        }
        wins += tie_pos as f64 * (below as f64 + 0.5 * tie_neg as f64);
        below += tie_neg;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Greedy matching in score order: each prediction takes the unmatched
/// ground truth of its sample with the highest IoU, if that IoU reaches
/// `tiou`. `preds` must already be ranked. Returns a hit flag per
/// prediction.
fn match_greedy(preds: &[(usize, ScoredSegment)], gts: &[Vec<Segment>], tiou: f64) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    preds
        .iter()
        .map(|(sample, p)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts[*sample].iter().enumerate() {
                if used[*sample][j] {
                    continue;
                }
                let iou = p.segment().iou(gt);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= tiou => {
                    used[*sample][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

fn total_gt(gts: &[Vec<Segment>], what: &str) -> Result<usize> {
    let n: usize = gts.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::Metric(format!("{what} undefined: no ground-truth segments")));
    }
    Ok(n)
}

fn check_lengths(preds: &[Vec<ScoredSegment>], gts: &[Vec<Segment>]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Metric(format!(
            "{} prediction lists for {} samples",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Average precision at one tIoU, predictions pooled over samples and
/// matched only within their own sample. All-points interpolation: recall
/// steps weighted by the best precision at that recall or beyond.
pub fn average_precision(preds: &[Vec<ScoredSegment>], gts: &[Vec<Segment>], tiou: f64) -> Result<f64> {
    check_lengths(preds, gts)?;
    let n_gt = total_gt(gts, "AP")? as f64;
    let mut pooled: Vec<(usize, ScoredSegment)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.iter().map(move |s| (i, *s)))
        .collect();
    pooled.sort_by(|a, b| rank_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    let hits = match_greedy(&pooled, gts, tiou);

    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Ok(ap)
}

/// Recall with at most `k` predictions per sample, averaged over the tIoU
/// grid `0.5:0.05:0.95`.
pub fn average_recall_at_k(preds: &[Vec<ScoredSegment>], gts: &[Vec<Segment>], k: usize) -> Result<f64> {
    check_lengths(preds, gts)?;
    let n_gt = total_gt(gts, "AR")? as f64;
    let grid = recall_tious();
    let mut sum = 0.0;
    for &tiou in &grid {
        let mut matched = 0usize;
        for (i, p) in preds.iter().enumerate() {
            let mut top: Vec<(usize, ScoredSegment)> = p.iter().map(|s| (i, *s)).collect();
            top.sort_by(|a, b| rank_order(&a.1, &b.1));
            top.truncate(k);
            matched += match_greedy(&top, gts, tiou).iter().filter(|&&h| h).count();
        }
        sum += matched as f64 / n_gt;
    }
    Ok(sum / grid.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    /// At [`AP_TIOUS`].
    pub ap: [f64; 4],
    /// At [`AR_KS`].
    pub ar: [f64; 4],
    pub score: f64,
    pub final_score: f64,
}

/// Weighted localisation score and `(auc + score) / 2`.
pub fn final_score(auc: f64, ap: [f64; 4], ar: [f64; 4]) -> MetricsReport {
    let weighted: f64 = ap
        .iter()
        .chain(&ar)
        .zip(WEIGHTS)
        .map(|(v, w)| f64::from(w) * v)
        .sum();
    let score = weighted / 16.0;
    MetricsReport {
        auc,
        ap,
        ar,
        score,
        final_score: (auc + score) / 2.0,
    }
}

pub const CSV_HEADER: &str = "auc,ap50,ap75,ap90,ap95,ar30,ar20,ar10,ar5,score,final_score";

impl MetricsReport {
    pub fn to_json(&self) -> Value {
        let ap: serde_json::Map<String, Value> = AP_TIOUS
            .iter()
            .zip(self.ap)
            .map(|(t, v)| (t.to_string(), json!(v)))
            .collect();
        let ar: serde_json::Map<String, Value> = AR_KS
            .iter()
            .zip(self.ar)
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        let weights: Vec<f64> = WEIGHTS.iter().map(|&w| f64::from(w) / 16.0).collect();
        json!({
            "auc": self.auc,
            "ap": ap,
            "ar": ar,
            "score": self.score,
            "final_score": self.final_score,
            "weights": {
                "ap": AP_TIOUS.iter().zip(&weights[..4]).map(|(t, w)| (t.to_string(), json!(w))).collect::<serde_json::Map<_, _>>(),
                "ar": AR_KS.iter().zip(&weights[4..]).map(|(k, w)| (k.to_string(), json!(w))).collect::<serde_json::Map<_, _>>(),
            },
        })
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.auc];
        cols.extend(self.ap);
        cols.extend(self.ar);
        cols.push(self.score);
        cols.push(self.final_score);
        cols.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
    }
}

/// Score a prediction set against annotations. Every id must appear in both.
/// The sequence label for AUC is "has at least one segment".
pub fn evaluate(preds: &[Prediction], gts: &[Annotation]) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::Data("duplicate ids in predictions".into()));
    }
    let gt_ids: HashMap<&str, ()> = gts.iter().map(|a| (a.id.as_str(), ())).collect();
    let mut missing: Vec<String> = gts
        .iter()
        .filter(|a| !by_id.contains_key(a.id.as_str()))
        .map(|a| format!("{} (no prediction)", a.id))
        .collect();
    missing.extend(
        preds
            .iter()
            .filter(|p| !gt_ids.contains_key(p.id.as_str()))
            .map(|p| format!("{} (no annotation)", p.id)),
    );
    if !missing.is_empty() {
        return Err(Error::Data(format!("id mismatch: {}", missing.join(", "))));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    let mut pred_lists = Vec::with_capacity(gts.len());
    let mut gt_lists = Vec::with_capacity(gts.len());
    for a in gts {
        let p = by_id[a.id.as_str()];
        pairs.push((p.confidence, !a.segments.is_genuine()));
        pred_lists.push(p.scored());
        gt_lists.push(a.segments.segments.clone());
    }
    let auc = roc_auc(&pairs)?;
    let mut ap = [0.0; 4];
    for (v, &t) in ap.iter_mut().zip(&AP_TIOUS) {
        *v = average_precision(&pred_lists, &gt_lists, t)?;
    }
    let mut ar = [0.0; 4];
    for (v, &k) in ar.iter_mut().zip(&AR_KS) {
        *v = average_recall_at_k(&pred_lists, &gt_lists, k)?;
    }
    Ok(final_score(auc, ap, ar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(start: f64, end: f64, score: f64) -> ScoredSegment {
        ScoredSegment { start, end, score }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[(0.9, true), (0.1, false), (0.8, true)]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[(0.5, true), (0.5, false), (0.5, false)]).unwrap(), 0.5);
        assert!(roc_auc(&[(0.5, true)]).unwrap_err().to_string().contains("AUC undefined"));
    }

    #[test]
    fn exact_predictions_give_full_ap() {
        let gts = vec![vec![Segment::new(0.0, 1.0)], vec![Segment::new(2.0, 3.0), Segment::new(4.0, 6.0)]];
        let preds: Vec<Vec<ScoredSegment>> = gts
            .iter()
            .map(|g| g.iter().map(|x| s(x.start, x.end, 0.9)).collect())
            .collect();
        for t in AP_TIOUS {
            assert_eq!(average_precision(&preds, &gts, t).unwrap(), 1.0);
        }
        assert_eq!(average_recall_at_k(&preds, &gts, 30).unwrap(), 1.0);
        assert_eq!(average_recall_at_k(&preds, &gts, 0).unwrap(), 0.0);
    }

    #[test]
    fn missed_tiou_gives_zero() {
        let gts = vec![vec![Segment::new(0.0, 1.0)]];
        let preds = vec![vec![s(0.8, 2.0, 0.9)]];
        assert_eq!(average_precision(&preds, &gts, 0.5).unwrap(), 0.0);
        assert!(average_precision(&preds, &[vec![]], 0.5).is_err());
    }

    #[test]
    fn weights() {
        assert_eq!(final_score(1.0, [1.0; 4], [1.0; 4]).score, 1.0);
        assert_eq!(final_score(1.0, [1.0; 4], [1.0; 4]).final_score, 1.0);
        assert_eq!(final_score(1.0, [0.0; 4], [0.0; 4]).final_score, 0.5);
        let r = final_score(0.0, [1.0, 0.0, 0.0, 0.0], [0.0; 4]);
        assert_eq!(r.score, 1.0 / 16.0);
    }

    #[test]
    fn tiou_grid() {
        let g = recall_tious();
        assert_eq!(g[0], 0.5);
        assert_eq!(g[9], 0.95);
        assert_eq!(g[5], 0.75);
    }
}
