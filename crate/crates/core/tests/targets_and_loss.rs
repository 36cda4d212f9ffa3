use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempseg::backbone::{level_lengths, to_raw_index};
use tempseg::config::LossConfig;
use tempseg::featio::{Segment, SegmentSet};
use tempseg::heads::{assign_targets, decode_span, RegressionRanges, TimestepPrediction};
use tempseg::loss::{diou_1d, focal_loss, total_loss};
use tempseg::tensor::{Graph, Tensor};

fn full_masks(len: usize, levels: usize) -> (Vec<Vec<bool>>, Vec<usize>) {
    let lens = level_lengths(len, levels, 2);
    (lens.iter().map(|&n| vec![true; n]).collect(), (0..levels).map(|l| 1 << l).collect())
}

#[test]
fn one_second_segment_covers_indices_50_to_100() {
    let set = SegmentSet::new(vec![Segment::new(1.0, 2.0)]);
    let t = assign_targets(&set, &[vec![true; 500]], &[1], 50.0, &RegressionRanges::powers_of_two(1)).unwrap();
    let pos: Vec<usize> = (0..500).filter(|&i| t.levels[0].labels[i]).collect();
    assert_eq!(pos, (50..=100).collect::<Vec<_>>());
}

#[test]
fn long_segment_lands_on_the_last_level_only() {
    // 600 feature units at 50 fps.
    let set = SegmentSet::new(vec![Segment::new(2.0, 14.0)]);
    let (masks, strides) = full_masks(1024, 5);
    let t = assign_targets(&set, &masks, &strides, 50.0, &RegressionRanges::powers_of_two(5)).unwrap();
    for (l, lt) in t.levels.iter().enumerate() {
        let n = lt.labels.iter().filter(|&&b| b).count();
        assert_eq!(n > 0, l == 4, "level {l} has {n} positives");
    }
}

/// Every (level, position, segment) triple checked directly.
fn brute_force(
    segs: &[Segment],
    masks: &[Vec<bool>],
    strides: &[usize],
    fps: f64,
    ranges: &RegressionRanges,
) -> Vec<Vec<Option<(f64, f64, Segment)>>> {
    masks
        .iter()
        .enumerate()
        .map(|(l, mask)| {
            let (lo, hi) = ranges.range(l);
            (0..mask.len())
                .map(|tau| {
                    if !mask[tau] {
                        return None;
                    }
                    let raw = (strides[l] / 2 + tau * strides[l]) as f64;
                    let mut best: Option<Segment> = None;
                    for s in segs {
                        let units = (s.end - s.start) * fps;
                        let inside = raw / fps >= s.start && raw / fps <= s.end;
                        if inside && units >= lo && units < hi && best.is_none_or(|b| s.end - s.start < b.end - b.start) {
                            best = Some(*s);
                        }
                    }
                    best.map(|s| {
                        let st = strides[l] as f64;
                        ((raw - s.start * fps) / st, (s.end * fps - raw) / st, s)
                    })
                })
                .collect()
        })
        .collect()
}

fn random_segments(r: &mut ChaCha8Rng, frames: usize, fps: f64) -> Vec<Segment> {
    (0..r.random_range(0..5))
        .map(|_| {
            let a = r.random_range(0..frames - 2);
            let b = r.random_range(a + 1..frames.min(a + 150));
            Segment::new(a as f64 / fps, b as f64 / fps)
        })
        .collect()
}

#[test]
fn assignment_matches_brute_force() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        let fps = [25.0, 50.0][r.random_range(0..2)];
        let rows = r.random_range(16..300);
        let valid = r.random_range(1..=rows);
        let levels = r.random_range(1..5);
        let ranges = RegressionRanges::new((1..levels).map(|i| 6.0 * i as f64 + r.random_range(0.0..5.0)).collect()).unwrap();
        let mut m = (0..rows).map(|i| i < valid).collect::<Vec<bool>>();
        let mut masks = vec![m.clone()];
        for _ in 1..levels {
            m = m.chunks(2).map(|c| c.iter().any(|&b| b)).collect();
            masks.push(m.clone());
        }
        let strides: Vec<usize> = (0..levels).map(|l| 1 << l).collect();
        let segs = random_segments(&mut r, valid.max(3), fps);
        let t = assign_targets(&SegmentSet::new(segs.clone()), &masks, &strides, fps, &ranges).unwrap();
        let want = brute_force(&segs, &masks, &strides, fps, &ranges);
        for (lt, w) in t.levels.iter().zip(&want) {
            for tau in 0..w.len() {
                match w[tau] {
                    None => assert!(!lt.labels[tau] && lt.assigned[tau].is_none()),
                    Some((ds, de, s)) => {
                        assert!(lt.labels[tau]);
                        assert_eq!(lt.assigned[tau].map(|a| a.len()), Some(s.len()));
                        assert!((lt.d_s[tau] - ds.max(0.0)).abs() < 1e-9 && (lt.d_e[tau] - de.max(0.0)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}

proptest! {
    /// Decoding the regression targets of any positive gives back its
    /// segment.
    #[test]
    fn targets_decode_to_their_segment(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let fps = 25.0;
        let (masks, strides) = full_masks(256, 3);
        let segs = random_segments(&mut r, 250, fps);
        let ranges = RegressionRanges::new(vec![16.0, 32.0]).unwrap();
        let t = assign_targets(&SegmentSet::new(segs), &masks, &strides, fps, &ranges).unwrap();
        for (level, lt) in t.levels.iter().enumerate() {
            for tau in (0..lt.labels.len()).filter(|&i| lt.labels[i]) {
                let seg = lt.assigned[tau].unwrap();
                let p = TimestepPrediction { level, tau, p: 0.5, d_s: lt.d_s[tau], d_e: lt.d_e[tau] };
                // A position sitting on a boundary decodes to a one-sided
                // span, still inside the segment.
                match decode_span(&p, &strides, fps, 256.0 / fps) {
                    Some(d) => {
                        prop_assert!((d.start - seg.start).abs() < 1e-9);
                        prop_assert!((d.end - seg.end).abs() < 1e-9);
                    }
                    None => prop_assert!(seg.len() < 1e-9),
                }
                prop_assert!(lt.d_s[tau] >= 0.0 && lt.d_e[tau] >= 0.0);
                let raw = to_raw_index(tau, strides[level]);
                prop_assert!(raw as f64 / fps >= seg.start);
            }
        }
    }
}

#[test]
fn decode_example() {
    let p = TimestepPrediction { level: 0, tau: 10, p: 0.9, d_s: 2.0, d_e: 3.0 };
    let s = decode_span(&p, &[1], 50.0, 10.0).unwrap();
    assert!((s.start - 0.16).abs() < 1e-12);
    assert!((s.end - 0.26).abs() < 1e-12);
}

fn std_cfg() -> LossConfig {
    LossConfig { lambda: 0.01, focal_gamma: 2.0, focal_alpha: 0.25, literal_focal: false }
}

#[test]
fn single_positive_at_one_half() {
    // 0.25 · 0.5² · ln 2
    let v = focal_loss(&[0.5], &[true], &[true], &std_cfg());
    assert!((v - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((v - 0.0433).abs() < 1e-4);
}

#[test]
fn diou_hand_values() {
    assert!((diou_1d((0.0, 1.0), (2.0, 3.0)).unwrap() + 4.0 / 9.0).abs() < 1e-12);
    assert!((diou_1d((0.0, 2.0), (1.0, 3.0)).unwrap() - 2.0 / 9.0).abs() < 1e-12);
    assert_eq!(diou_1d((1.0, 2.0), (1.0, 2.0)).unwrap(), 1.0);
    assert!(diou_1d((1.0, 1.0), (1.0, 2.0)).is_err());
}

/// `1 − IoU + ρ²/c²` straight from the definition.
fn diou_loss_ref(p: (f64, f64), g: (f64, f64)) -> f64 {
    let inter = (p.1.min(g.1) - p.0.max(g.0)).max(0.0);
    let union = (p.1 - p.0) + (g.1 - g.0) - inter;
    let rho = (p.0 + p.1) / 2.0 - (g.0 + g.1) / 2.0;
    let c = p.1.max(g.1) - p.0.min(g.0);
    1.0 - (inter / union - rho * rho / (c * c))
}

fn focal_ref(p: f64, y: bool, a: f64, gamma: f64) -> f64 {
    if y {
        -a * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - a) * p.powf(gamma) * (1.0 - p).ln()
    }
}

#[test]
fn total_loss_matches_scalar_loop() {
    let fps = 10.0;
    let cfg = LossConfig { lambda: 0.3, ..std_cfg() };
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for case in 0..50 {
        let rows = [2, 8, 16][case % 3];
        let valid = r.random_range(1..=rows);
        let (mut masks, strides) = full_masks(rows, 2);
        masks[0] = (0..rows).map(|i| i < valid).collect();
        masks[1] = masks[0].chunks(2).map(|c| c.iter().any(|&b| b)).collect();
        let segs = if case == 0 {
            // Two timesteps, one positive.
            vec![Segment::new(0.0, 0.05)]
        } else {
            random_segments(&mut r, valid.max(3), fps)
        };
        let ranges = RegressionRanges::new(vec![3.0]).unwrap();
        let targets = assign_targets(&SegmentSet::new(segs), &masks, &strides, fps, &ranges).unwrap();
        let probs: Vec<Vec<f64>> = masks.iter().map(|m| m.iter().map(|_| r.random_range(0.01..0.99)).collect()).collect();
        let offs: Vec<Vec<f64>> = masks.iter().map(|m| (0..2 * m.len()).map(|_| r.random_range(0.1..4.0)).collect()).collect();
        let t_plus = targets.n_positive();
        let norm = t_plus.max(1) as f64;

        let mut g = Graph::<f64>::new();
        let cls: Vec<_> = probs.iter().map(|p| g.constant(Tensor::new([p.len(), 1], p.clone()).unwrap())).collect();
        let reg: Vec<_> = offs.iter().map(|o| g.constant(Tensor::new([o.len() / 2, 2], o.clone()).unwrap())).collect();
        let got = total_loss(&mut g, &cls, &reg, &masks, &strides, &targets, fps, &cfg, norm).unwrap();
        let got_total = g.value(got.total).data()[0];

        let mut cls_sum = 0.0;
        let mut reg_sum = 0.0;
        for l in 0..2 {
            let s = strides[l] as f64;
            for tau in (0..masks[l].len()).filter(|&i| masks[l][i]) {
                let y = targets.levels[l].labels[tau];
                cls_sum += focal_ref(probs[l][tau], y, 0.25, 2.0);
                if y {
                    let seg = targets.levels[l].assigned[tau].unwrap();
                    let t = (strides[l] / 2 + tau * strides[l]) as f64;
                    let p = ((t - offs[l][2 * tau] * s) / fps, (t + offs[l][2 * tau + 1] * s) / fps);
                    reg_sum += diou_loss_ref(p, (seg.start, seg.end));
                }
            }
        }
        let want = (0.3 * cls_sum + reg_sum) / norm;
        assert!((got_total - want).abs() < 1e-12, "case {case}: {got_total} vs {want}");
        assert!((got.cls - cls_sum / norm).abs() < 1e-12);
        assert!((got.reg - reg_sum / norm).abs() < 1e-12);
        if case == 0 {
            assert_eq!((rows, t_plus), (2, 1));
        }
    }
}

#[test]
fn all_genuine_batch_is_lambda_times_negative_focal() {
    let mut g = Graph::<f64>::new();
    let p = vec![0.2, 0.7, 0.1, 0.4];
    let cls = [g.constant(Tensor::new([4, 1], p.clone()).unwrap())];
    let reg = [g.constant(Tensor::new([4, 2], vec![1.0; 8]).unwrap())];
    let masks = [vec![true; 4]];
    let targets = assign_targets(&SegmentSet::default(), &masks, &[1], 10.0, &RegressionRanges::powers_of_two(1)).unwrap();
    let cfg = std_cfg();
    let v = total_loss(&mut g, &cls, &reg, &masks, &[1], &targets, 10.0, &cfg, 1.0).unwrap();
    let want: f64 = p.iter().map(|&x| 0.01 * focal_ref(x, false, 0.25, 2.0)).sum();
    assert!((g.value(v.total).data()[0] - want).abs() < 1e-14);
    assert_eq!(v.reg, 0.0);
}

#[test]
fn lambda_zero_is_mean_positive_diou() {
    let fps = 10.0;
    let masks = [vec![true; 20]];
    let seg = Segment::new(0.5, 1.2);
    let targets = assign_targets(&SegmentSet::new(vec![seg]), &masks, &[1], fps, &RegressionRanges::powers_of_two(1)).unwrap();
    let n = targets.n_positive();
    assert_eq!(n, 8);
    let mut g = Graph::<f64>::new();
    let cls = [g.constant(Tensor::new([20, 1], vec![0.3; 20]).unwrap())];
    let reg = [g.constant(Tensor::new([20, 2], vec![2.0; 40]).unwrap())];
    let cfg = LossConfig { lambda: 0.0, ..std_cfg() };
    let v = total_loss(&mut g, &cls, &reg, &masks, &[1], &targets, fps, &cfg, n as f64).unwrap();
    let mean: f64 = (5..=12)
        .map(|t| diou_loss_ref(((t as f64 - 2.0) / fps, (t as f64 + 2.0) / fps), (0.5, 1.2)))
        .sum::<f64>()
        / 8.0;
    assert!((g.value(v.total).data()[0] - mean).abs() < 1e-12);
}
