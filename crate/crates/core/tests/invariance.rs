//! Padding and locality: outputs at valid positions must not change, to the
//! bit, when frames they cannot see are altered.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempseg::config::ModelConfig;
use tempseg::model::{frames_tensor, Model};
use tempseg::tensor::Graph;

fn cfg() -> ModelConfig {
    ModelConfig {
        model_dim: 16,
        n_blocks: 3,
        n_levels: 2,
        window_size: 5,
        n_heads: 2,
        m_max: 96,
        regression_ranges: vec![8.0],
        ..ModelConfig::default()
    }
}

const DIM: usize = 6;

/// Fresh init has zero final-head weights, which would make every output
/// constant and the test vacuous; jitter all parameters.
fn model(c: &ModelConfig, seed: u64) -> Model<f32> {
    let mut m = Model::<f32>::new(c, DIM, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    m
}

/// Per level, the cls and reg outputs flattened; only valid rows.
fn run(model: &Model<f32>, frames: &[f32], mask: &[bool]) -> Vec<(Vec<u32>, Vec<u32>, Vec<bool>)> {
    let mut g = Graph::<f32>::new();
    let vars = model.bind(&mut g, false);
    let x = g.constant(frames_tensor(frames, DIM).unwrap());
    let out = model.forward(&mut g, &vars, x, mask).unwrap();
    (0..out.cls.len())
        .map(|l| {
            let m = out.pyramid.masks[l].clone();
            let c = g.value(out.cls[l]).data().iter().map(|v| v.to_bits()).collect();
            let r = g.value(out.reg[l]).data().iter().map(|v| v.to_bits()).collect();
            (c, r, m)
        })
        .collect()
}

/// Furthest input frame each output position can depend on, per level.
/// Attention looks `window/2` ahead, the LSTM only back, each kernel-3
/// conv one step ahead at its input rate, and the heads stack three of
/// them.
fn forward_reach(cfg: &ModelConfig, len: usize) -> Vec<Vec<usize>> {
    let half = cfg.window_size / 2;
    let clamp = |v: &[usize], i: usize| v[i.min(v.len() - 1)];
    let mut dep: Vec<usize> = (0..len).map(|i| (i + 1).min(len - 1)).collect();
    let mut levels = Vec::new();
    for b in 0..cfg.n_blocks {
        dep = (0..dep.len()).map(|i| clamp(&dep, i + half)).collect();
        let tap_from = cfg.n_blocks - cfg.n_levels;
        if b < tap_from {
            continue;
        }
        let s = if b == tap_from { 1 } else { cfg.downsample_stride };
        let n = dep.len().div_ceil(s);
        dep = (0..n).map(|t| clamp(&dep, s * t + 1)).collect();
        levels.push((0..n).map(|t| clamp(&dep, t + 3)).collect());
    }
    levels
}

#[test]
fn padded_frames_never_reach_valid_outputs() {
    let c = cfg();
    let model = model(&c, 3);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let rows = c.m_max;
        let valid = r.random_range(4..rows);
        let mask: Vec<bool> = (0..rows).map(|i| i < valid).collect();
        let mut frames: Vec<f32> = (0..rows * DIM).map(|_| r.random_range(-2.0..2.0)).collect();
        let base = run(&model, &frames, &mask);
        for v in &mut frames[valid * DIM..] {
            *v = if r.random_bool(0.1) { f32::MAX } else { r.random_range(-1e4..1e4) };
        }
        let moved = run(&model, &frames, &mask);
        for (l, (a, b)) in base.iter().zip(&moved).enumerate() {
            for (t, _) in a.2.iter().enumerate().filter(|(_, &m)| m) {
                assert_eq!(a.0[t], b.0[t], "trial {trial} level {l} cls at {t}");
                assert_eq!(a.1[2 * t..2 * t + 2], b.1[2 * t..2 * t + 2], "trial {trial} level {l} reg at {t}");
            }
        }
    }
}

#[test]
fn frames_beyond_the_receptive_field_are_invisible() {
    let c = cfg();
    let model = model(&c, 4);
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut changed_somewhere = 0;
    for trial in 0..100 {
        let rows = c.m_max;
        let valid = r.random_range(40..=rows);
        let mask: Vec<bool> = (0..rows).map(|i| i < valid).collect();
        let mut frames: Vec<f32> = (0..rows * DIM).map(|_| r.random_range(-2.0..2.0)).collect();
        let base = run(&model, &frames, &mask);
        let j = r.random_range(valid / 2..valid);
        for v in &mut frames[j * DIM..(j + 1) * DIM] {
            *v += r.random_range(0.5..3.0);
        }
        let moved = run(&model, &frames, &mask);
        let reach = forward_reach(&c, rows);
        for (l, (a, b)) in base.iter().zip(&moved).enumerate() {
            for t in (0..a.2.len()).filter(|&t| a.2[t]) {
                let same = a.0[t] == b.0[t] && a.1[2 * t..2 * t + 2] == b.1[2 * t..2 * t + 2];
                if reach[l][t] < j {
                    assert!(same, "trial {trial}: level {l} position {t} (reach {}) saw frame {j}", reach[l][t]);
                } else if !same {
                    changed_somewhere += 1;
                }
            }
        }
    }
    // The perturbation is visible to the LSTM and everything after it.
    assert!(changed_somewhere > 100);
}

#[test]
fn extra_padding_changes_nothing() {
    let c = cfg();
    let model = model(&c, 8);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let valid = r.random_range(2..60);
        let frames: Vec<f32> = (0..valid * DIM).map(|_| r.random_range(-2.0..2.0)).collect();
        let short_rows = valid.max(model.min_len());
        let long_rows = short_rows + r.random_range(1..40);
        let outputs = [short_rows, long_rows].map(|rows| {
            let mut f = frames.clone();
            f.resize(rows * DIM, 0.5);
            let mask: Vec<bool> = (0..rows).map(|i| i < valid).collect();
            run(&model, &f, &mask)
        });
        for (a, b) in outputs[0].iter().zip(&outputs[1]) {
            for t in (0..a.2.len()).filter(|&t| a.2[t]) {
                assert_eq!(a.0[t], b.0[t]);
                assert_eq!(a.1[2 * t..2 * t + 2], b.1[2 * t..2 * t + 2]);
            }
        }
    }
}
