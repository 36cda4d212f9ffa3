use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempseg::backbone::{downsample_mask, level_lengths, mdc_project, to_raw_index};
use tempseg::featio::Modality;
use tempseg::infer::{fuse_modalities, fuse_sets, Prediction, TaggedSegment};
use tempseg::tensor::{Graph, Tensor};

/// `out(t) = Σ_k w_k·z(t+k) − θ·z(t)·Σ_k w_k` over valid rows, written as
/// plain loops with out-of-range and masked neighbours read as zero.
fn mdc_oracle(z: &[f64], mask: &[bool], w: &[f64], cin: usize, cout: usize, theta: f64) -> Vec<f64> {
    let len = mask.len();
    let zin = |t: isize, c: usize| {
        if t < 0 || t as usize >= len || !mask[t as usize] {
            0.0
        } else {
            z[t as usize * cin + c]
        }
    };
    let mut out = vec![0.0; len * cout];
    for t in 0..len {
        if !mask[t] {
            continue;
        }
        for o in 0..cout {
            let mut acc = 0.0;
            for (k, off) in [-1isize, 0, 1].into_iter().enumerate() {
                for c in 0..cin {
                    let wk = w[(k * cin + c) * cout + o];
                    acc += wk * zin(t as isize + off, c);
                    acc -= theta * wk * zin(t as isize, c);
                }
            }
            out[t * cout + o] = acc;
        }
    }
    out
}

#[test]
fn mdc_matches_scalar_loops() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let len = r.random_range(1..20);
        let cin = r.random_range(1..6);
        let cout = r.random_range(1..6);
        let theta = if case % 4 == 0 { 0.0 } else { r.random_range(0.0..1.0) };
        let valid = r.random_range(0..=len);
        let mask: Vec<bool> = (0..len).map(|i| i < valid).collect();
        let z: Vec<f64> = (0..len * cin).map(|_| r.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..3 * cin * cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut g = Graph::<f64>::new();
        let zv = g.constant(Tensor::new([len, cin], z.clone()).unwrap());
        let wv = g.constant(Tensor::new([3, cin, cout], w.clone()).unwrap());
        let y = mdc_project(&mut g, zv, &mask, wv, theta).unwrap();
        let want = mdc_oracle(&z, &mask, &w, cin, cout, theta);
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn mdc_with_unit_theta_ignores_constant_input() {
    // With θ = 1 a constant interior signal cancels exactly.
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new([6, 1], vec![2.0; 6]).unwrap());
    let w = g.constant(Tensor::new([3, 1, 2], vec![0.3, -1.0, 0.5, 2.0, 0.7, 0.25]).unwrap());
    let y = mdc_project(&mut g, z, &[true; 6], w, 1.0).unwrap();
    let d = g.value(y).data();
    for t in 1..5 {
        assert!(d[2 * t].abs() < 1e-12 && d[2 * t + 1].abs() < 1e-12);
    }
}

#[test]
fn level_lengths_halve() {
    assert_eq!(level_lengths(1024, 5, 2), vec![1024, 512, 256, 128, 64]);
    assert_eq!(level_lengths(250, 3, 2), vec![250, 125, 63]);
    assert_eq!(level_lengths(7, 1, 2), vec![7]);
}

#[test]
fn raw_index_examples() {
    assert_eq!(to_raw_index(0, 1), 0);
    assert_eq!(to_raw_index(3, 2), 7);
    assert_eq!(to_raw_index(2, 4), 10);
}

proptest! {
    #[test]
    fn downsampled_mask_is_a_prefix_of_the_right_length(len in 1usize..300, valid in 0usize..300, s in 2usize..4) {
        let valid = valid.min(len);
        let mask: Vec<bool> = (0..len).map(|i| i < valid).collect();
        let coarse = downsample_mask(&mask, s);
        prop_assert_eq!(coarse.len(), len.div_ceil(s));
        prop_assert_eq!(coarse.iter().filter(|&&m| m).count(), valid.div_ceil(s));
        prop_assert!(coarse.windows(2).all(|w| w[0] >= w[1]));
    }
}

fn tagged(r: &mut ChaCha8Rng, m: Modality) -> TaggedSegment {
    let start = r.random_range(0.0..9.0);
    TaggedSegment { start, end: start + r.random_range(0.05..1.0), score: r.random_range(0.0..1.0), modality: m }
}

fn prediction(r: &mut ChaCha8Rng, id: &str, m: Modality) -> Prediction {
    let segments: Vec<_> = (0..r.random_range(0..6)).map(|_| tagged(r, m)).collect();
    let confidence = segments.iter().map(|s| s.score).fold(0.0, f64::max);
    Prediction { id: id.into(), confidence, segments }
}

fn key(s: &TaggedSegment) -> (u64, u64, u64, u8) {
    (s.start.to_bits(), s.end.to_bits(), s.score.to_bits(), s.modality.tag())
}

#[test]
fn fusion_takes_max_confidence_and_a_multiset_union() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let a = prediction(&mut r, "x", Modality::Audio);
        let mut v = prediction(&mut r, "x", Modality::Video);
        if r.random_bool(0.2) && !a.segments.is_empty() {
            // An identical interval from the other branch is kept twice.
            v.segments.push(TaggedSegment { modality: Modality::Video, ..a.segments[0] });
        }
        let f = fuse_modalities(&a, &v).unwrap();
        assert_eq!(f.confidence, a.confidence.max(v.confidence));
        let mut got: Vec<_> = f.segments.iter().map(key).collect();
        let mut want: Vec<_> = a.segments.iter().chain(&v.segments).map(key).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        assert_eq!(fuse_modalities(&v, &a).unwrap().confidence, f.confidence);
    }
}

#[test]
fn fusing_sets_pairs_by_id() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let ids = ["a", "b", "c"];
    let audio: Vec<_> = ids.iter().map(|id| prediction(&mut r, id, Modality::Audio)).collect();
    let mut video: Vec<_> = ids.iter().map(|id| prediction(&mut r, id, Modality::Video)).collect();
    video.reverse();
    let fused = fuse_sets(&audio, &video).unwrap();
    for (f, a) in fused.iter().zip(&audio) {
        let v = video.iter().find(|v| v.id == a.id).unwrap();
        assert_eq!(f, &fuse_modalities(a, v).unwrap());
    }
    video.pop();
    assert!(fuse_sets(&audio, &video).is_err());
    assert!(fuse_modalities(&audio[0], &audio[1]).is_err());
}
