//! Slow, obviously-correct references for the scoring and suppression
//! code. Everything works on plain tuples so these share no code or types
//! with the library under test.
//!
//! A prediction is `(start, end, score)`, a ground truth `(start, end)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Pred = (f64, f64, f64);
pub type Gt = (f64, f64);

pub fn iou(a: Gt, b: Gt) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Higher score, then earlier start, then shorter, then lower sample index.
fn ahead(a: &(usize, Pred), b: &(usize, Pred)) -> bool {
    let key = |x: &(usize, Pred)| (-x.1 .2, x.1 .0, x.1 .1 - x.1 .0, x.0 as f64);
    key(a) < key(b)
}

/// Selection sort by [`ahead`].
pub fn ranked(mut v: Vec<(usize, Pred)>) -> Vec<(usize, Pred)> {
    for i in 0..v.len() {
        let mut best = i;
        for j in i + 1..v.len() {
            if ahead(&v[j], &v[best]) {
                best = j;
            }
        }
        v.swap(i, best);
    }
    v
}

/// True positives in a ranked list: each prediction claims the unclaimed
/// GT of its sample with the highest IoU, counted when it reaches `tiou`.
pub fn true_positives(list: &[(usize, Pred)], gts: &[Vec<Gt>], tiou: f64) -> usize {
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut tp = 0;
    for (sample, p) in list {
        let mut best_j = None;
        let mut best_iou = -1.0;
        for (j, g) in gts[*sample].iter().enumerate() {
            if taken.contains(&(*sample, j)) {
                continue;
            }
            let v = iou((p.0, p.1), *g);
            if v > best_iou {
                best_iou = v;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            if best_iou >= tiou {
                taken.push((*sample, j));
                tp += 1;
            }
        }
    }
    tp
}

/// Sweep every score cut-off, recompute matching from scratch on each
/// prefix, then integrate the interpolated PR curve over recall steps.
pub fn average_precision(preds: &[Vec<Pred>], gts: &[Vec<Gt>], tiou: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let all = ranked(
        preds
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.iter().map(move |s| (i, *s)))
            .collect(),
    );
    let curve: Vec<(f64, f64)> = (1..=all.len())
        .map(|k| {
            let tp = true_positives(&all[..k], gts, tiou) as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = curve.iter().map(|c| c.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = curve.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Recall over `0.50, 0.55, …, 0.95` using each sample's top `k`.
pub fn average_recall(preds: &[Vec<Pred>], gts: &[Vec<Gt>], k: usize) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut total = 0.0;
    for step in 0..10 {
        // Hundredths, so 0.55 etc. are the doubles nearest the decimals.
        let tiou = (50 + 5 * step) as f64 / 100.0;
        let mut hits = 0;
        for (i, p) in preds.iter().enumerate() {
            let mut top = ranked(p.iter().map(|s| (i, *s)).collect());
            top.truncate(k);
            hits += true_positives(&top, gts, tiou);
        }
        total += hits as f64 / n_gt as f64;
    }
    total / 10.0
}

/// Mann-Whitney by counting every (forged, genuine) pair.
pub fn auc(pairs: &[(f64, bool)]) -> f64 {
    let mut wins = 0.0;
    let mut n = 0.0;
    for a in pairs.iter().filter(|p| p.1) {
        for b in pairs.iter().filter(|p| !p.1) {
            n += 1.0;
            wins += if a.0 > b.0 {
                1.0
            } else if a.0 == b.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / n
}

/// Textbook NMS: repeatedly take the best remaining segment and delete
/// everything overlapping it by more than `threshold`.
pub fn nms(segments: &[Pred], threshold: f64, max_outputs: usize) -> Vec<Pred> {
    let mut pool: Vec<(usize, Pred)> = segments.iter().map(|s| (0, *s)).collect();
    let mut kept = Vec::new();
    while !pool.is_empty() && kept.len() < max_outputs {
        pool = ranked(pool);
        let (_, top) = pool.remove(0);
        pool.retain(|(_, s)| iou((s.0, s.1), (top.0, top.1)) <= threshold);
        kept.push(top);
    }
    kept
}

/// Scores on a quarter grid half the time so ties occur.
fn score(r: &mut ChaCha8Rng) -> f64 {
    if r.random_bool(0.5) {
        r.random_range(0..5) as f64 / 4.0
    } else {
        r.random()
    }
}

/// Endpoints on a 0.5 s grid sometimes, so exact IoU ties and matches
/// right at a threshold show up.
pub fn span(r: &mut ChaCha8Rng) -> Gt {
    let coarse = r.random_bool(0.4);
    let a: f64 = if coarse { r.random_range(0..16) as f64 * 0.5 } else { r.random_range(0.0..8.0) };
    let len: f64 = if coarse { r.random_range(1..6) as f64 * 0.5 } else { r.random_range(0.05..3.0) };
    (a, a + len)
}

pub fn random_pred(r: &mut ChaCha8Rng) -> Pred {
    let (a, b) = span(r);
    (a, b, score(r))
}

#[derive(Clone, Debug)]
pub struct Case {
    pub preds: Vec<Vec<Pred>>,
    pub gts: Vec<Vec<Gt>>,
}

impl Case {
    /// `(max score, has GT)` per sample.
    pub fn confidence_pairs(&self) -> Vec<(f64, bool)> {
        self.preds
            .iter()
            .zip(&self.gts)
            .map(|(p, g)| (p.iter().map(|s| s.2).fold(0.0, f64::max), !g.is_empty()))
            .collect()
    }
}

/// Up to 8 samples, up to 5 GTs and 10 predictions each, at least one GT
/// overall. Half the predictions near a GT are jittered copies of it.
pub fn random_case(seed: u64) -> Case {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(1..=8);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..n {
        let n_gt = if r.random_bool(0.4) { 0 } else { r.random_range(1..=5) };
        let g: Vec<Gt> = (0..n_gt).map(|_| span(&mut r)).collect();
        let p: Vec<Pred> = (0..r.random_range(0..=10))
            .map(|_| {
                let (a, b) = if !g.is_empty() && r.random_bool(0.5) {
                    let t = g[r.random_range(0..g.len())];
                    let j = r.random_range(-0.3..0.3);
                    (t.0 + j, (t.1 + j * r.random::<f64>()).max(t.0 + j + 0.01))
                } else {
                    span(&mut r)
                };
                (a, b, score(&mut r))
            })
            .collect();
        preds.push(p);
        gts.push(g);
    }
    if gts.iter().all(Vec::is_empty) {
        gts[0].push((1.0, 2.0));
    }
    Case { preds, gts }
}
