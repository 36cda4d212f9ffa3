//! Finite-difference gradient checks over the primitives, every model
//! component, the losses and the full network in a tiny configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempseg_tensor::{gradcheck, GradcheckReport, Graph, Tensor, Var, DEFAULT_EPS};

use crate::backbone::{local_attention, mdc_project, rtlm_block, Pyramid};
use crate::config::{LossConfig, ModelConfig};
use crate::error::Result;
use crate::featio::{Segment, SegmentSet};
use crate::heads::{assign_targets, classify, regress, RegressionRanges};
use crate::loss::{diou_sum, focal_sum, total_loss, RegressionItem};
use crate::model::{level_masks, Model};

pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: u64,
    /// Worst relative error over all seeds.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckOutcome {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_error < GRADCHECK_TOL
    }
}

fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    if g.value(y).numel() == 1 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ED);
    let w = Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0))?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p)?)
}

fn run(
    name: &str,
    seeds: u64,
    inputs: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    op: &dyn Fn(&mut Graph<f64>, &[Var], &mut ChaCha8Rng) -> Result<Var>,
) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: name.to_string(),
        seeds,
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 7);
        let xs = inputs(&mut rng);
        let op_seed: u64 = rng.random();
        let report = gradcheck(&xs, DEFAULT_EPS, |g, v| {
            let mut r = ChaCha8Rng::seed_from_u64(op_seed);
            let y = op(g, v, &mut r).map_err(to_tensor_err)?;
            probe(g, y, seed).map_err(to_tensor_err)
        })?;
        absorb(&mut out, &report);
    }
    Ok(out)
}

fn to_tensor_err(e: crate::Error) -> tempseg_tensor::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => tempseg_tensor::TensorError::Invalid {
            op: "check",
            detail: other.to_string(),
        },
    }
}

fn absorb(out: &mut CheckOutcome, r: &GradcheckReport) {
    out.max_rel_error = out.max_rel_error.max(r.max_rel_error);
    out.checked += r.checked;
    out.skipped += r.skipped.len();
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).expect("positive dims")
}

fn d(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Every tape primitive on random shapes and values.
pub fn primitive_checks(seeds: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, |$r:ident| $shapes:expr, |$g:ident, $v:ident, $rr:ident| $body:expr) => {
            out.push(run(
                $name,
                seeds,
                &|$r: &mut ChaCha8Rng| {
                    let shapes: Vec<Vec<usize>> = $shapes;
                    shapes.iter().map(|s| uniform($r, s)).collect()
                },
                &|$g: &mut Graph<f64>, $v: &[Var], $rr: &mut ChaCha8Rng| -> Result<Var> { $body },
            )?);
        };
    }
    check!("add/sub/mul/scale", |r| { let s = vec![d(r, 1, 4), d(r, 1, 4)]; vec![s.clone(), s] }, |g, v, _r| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.mul(b, v[1])?;
        Ok(g.scale(c, -1.3)?)
    });
    check!("add_row", |r| { let n = d(r, 1, 4); vec![vec![d(r, 1, 4), n], vec![n]] }, |g, v, _r| Ok(g.add_row(v[0], v[1])?));
    check!("sigmoid", |r| vec![vec![d(r, 1, 6)]], |g, v, _r| Ok(g.sigmoid(v[0])?));
    check!("tanh", |r| vec![vec![d(r, 1, 6)]], |g, v, _r| Ok(g.tanh(v[0])?));
    check!("relu", |r| vec![vec![d(r, 1, 6)]], |g, v, _r| Ok(g.relu(v[0])?));
    check!("sum/mean", |r| vec![vec![d(r, 1, 3), d(r, 1, 3)]], |g, v, _r| {
        let s = g.sum(v[0])?;
        let m = g.mean(v[0])?;
        Ok(g.mul(s, m)?)
    });
    check!("max", |r| vec![vec![d(r, 1, 3), d(r, 1, 3)]], |g, v, _r| Ok(g.max(v[0])?));
    check!("sum_rows", |r| vec![vec![d(r, 1, 4), d(r, 1, 4)]], |g, v, _r| Ok(g.sum_rows(v[0])?));
    check!("matmul", |r| { let (m, k, n) = (d(r, 1, 4), d(r, 1, 4), d(r, 1, 4)); vec![vec![m, k], vec![k, n]] }, |g, v, _r| Ok(g.matmul(v[0], v[1])?));
    check!("transpose/reshape", |r| vec![vec![d(r, 1, 4), 6]], |g, v, _r| {
        let rows = g.shape(v[0])[0];
        let t = g.transpose(v[0])?;
        Ok(g.reshape(t, [3, rows * 2])?)
    });
    check!("slice_cols/concat_cols", |r| { let m = d(r, 1, 4); vec![vec![m, d(r, 2, 5)], vec![m, d(r, 1, 3)]] }, |g, v, r| {
        let n = g.shape(v[0])[1];
        let start = r.random_range(0..n - 1);
        let s = g.slice_cols(v[0], start, n)?;
        Ok(g.concat_cols(&[v[1], s, v[1]])?)
    });
    check!("gather_rows", |r| vec![vec![d(r, 1, 5), d(r, 1, 3)]], |g, v, r| {
        let m = g.shape(v[0])[0];
        let idx: Vec<usize> = (0..d(r, 1, 6)).map(|_| r.random_range(0..m)).collect();
        Ok(g.gather_rows(v[0], &idx)?)
    });
    check!("masked_fill", |r| vec![vec![d(r, 1, 5), d(r, 1, 3)]], |g, v, r| {
        let m = g.shape(v[0])[0];
        let keep: Vec<bool> = (0..m).map(|_| r.random_bool(0.6)).collect();
        Ok(g.masked_fill(v[0], &keep, 0.0)?)
    });
    check!("conv1d", |r| { let (l, ci, co, k) = (d(r, 3, 9), d(r, 1, 3), d(r, 1, 3), d(r, 1, 3)); vec![vec![l, ci], vec![k, ci, co], vec![co]] }, |g, v, r| {
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=1);
        Ok(g.conv1d(v[0], v[1], Some(v[2]), stride, pad)?)
    });
    check!("depthwise_conv1d", |r| { let (l, c, k) = (d(r, 3, 9), d(r, 1, 4), d(r, 1, 3)); vec![vec![l, c], vec![k, c], vec![c]] }, |g, v, r| {
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=1);
        Ok(g.depthwise_conv1d(v[0], v[1], Some(v[2]), stride, pad)?)
    });
    check!("layer_norm", |r| { let n = d(r, 2, 6); vec![vec![d(r, 1, 4), n], vec![n], vec![n]] }, |g, v, _r| Ok(g.layer_norm(v[0], v[1], v[2], 1e-5)?));
    check!("softmax", |r| vec![vec![d(r, 1, 4), d(r, 2, 6)]], |g, v, r| {
        let n = g.value(v[0]).numel();
        let mask: Vec<f64> = (0..n).map(|_| if r.random_bool(0.3) { f64::NEG_INFINITY } else { 0.0 }).collect();
        Ok(g.softmax(v[0], Some(&mask))?)
    });
    check!("lstm_cell", |r| { let (i, h) = (d(r, 1, 4), d(r, 1, 3)); vec![vec![1, i], vec![1, h], vec![1, h], vec![i, 4 * h], vec![h, 4 * h], vec![4 * h]] }, |g, v, _r| Ok(g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?));
    check!("lstm", |r| { let (l, i, h) = (d(r, 1, 6), d(r, 1, 4), d(r, 1, 3)); vec![vec![l, i], vec![i, 4 * h], vec![h, 4 * h], vec![4 * h]] }, |g, v, _r| Ok(g.lstm(v[0], v[1], v[2], v[3])?));
    check!("windowed_attention", |r| { let (l, h) = (d(r, 1, 7), d(r, 1, 2)); let s = vec![l, h * d(r, 1, 3)]; vec![s.clone(), s.clone(), s] }, |g, v, r| {
        let l = g.shape(v[0])[0];
        let heads = if g.shape(v[0])[1] % 2 == 0 { 2 } else { 1 };
        let valid: Vec<bool> = (0..l).map(|_| r.random_bool(0.7)).collect();
        let window = 2 * r.random_range(0..=2) + 1;
        Ok(g.windowed_attention(v[0], v[1], v[2], &valid, window, heads)?)
    });
    Ok(out)
}

/// The configuration of the full-network check: 8-dim features, two
/// blocks, two levels, eight frames.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_dim: 8,
        model_dim: 8,
        n_blocks: 2,
        n_levels: 2,
        window_size: 3,
        n_heads: 2,
        m_max: 8,
        regression_ranges: vec![4.0],
        ..ModelConfig::default()
    }
}

pub const TINY_FPS: f64 = 4.0;

/// A 7-of-8-valid mask and two segments that land on different levels.
pub fn tiny_example() -> (Vec<bool>, SegmentSet) {
    let mask = (0..8).map(|i| i < 7).collect();
    let segments = SegmentSet::new(vec![Segment::new(0.0, 0.75), Segment::new(1.0, 2.0)]);
    (mask, segments)
}

/// Tiny model with every parameter jittered away from its initial value,
/// so zero-initialised layers still pass gradient.
pub fn tiny_model(seed: u64) -> Result<Model<f64>> {
    let cfg = tiny_config();
    let mut m = Model::<f64>::new(&cfg, cfg.input_dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(m)
}

/// Full network + total loss, gradient with respect to the features and
/// every parameter.
pub fn full_model_check(seed: u64, loss_cfg: &LossConfig) -> Result<GradcheckReport> {
    let model = tiny_model(seed)?;
    let cfg = &model.config;
    let (mask, segments) = tiny_example();
    let masks = level_masks(&mask, cfg);
    let strides = cfg.level_strides();
    let targets = assign_targets(&segments, &masks, &strides, TINY_FPS, &RegressionRanges::for_model(cfg)?)?;
    let normaliser = targets.n_positive().max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![uniform(&mut rng, &[8, cfg.input_dim])];
    inputs.extend(model.params.tensors().iter().cloned());
    Ok(gradcheck(&inputs, DEFAULT_EPS, |g, v| {
        let vars = model.vars(v[1..].to_vec());
        let out = model.forward(g, &vars, v[0], &mask).map_err(to_tensor_err)?;
        let l = total_loss(g, &out.cls, &out.reg, &out.pyramid.masks, &out.pyramid.strides, &targets, TINY_FPS, loss_cfg, normaliser)
            .map_err(to_tensor_err)?;
        Ok(l.total)
    })?)
}

/// Component checks (projection, attention, block, heads, losses) over
/// `seeds` seeds and the full network over `full_seeds` seeds.
pub fn model_checks(seeds: u64, full_seeds: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let len_mask = |r: &mut ChaCha8Rng, len: usize| -> Vec<bool> {
        let valid = r.random_range(1..=len);
        (0..len).map(|i| i < valid).collect()
    };
    out.push(run(
        "mdc_project",
        seeds,
        &|r| {
            let (l, ci, co) = (d(r, 2, 7), d(r, 1, 3), d(r, 1, 3));
            vec![uniform(r, &[l, ci]), uniform(r, &[3, ci, co])]
        },
        &|g, v, r| {
            let l = g.shape(v[0])[0];
            let mask = len_mask(r, l);
            let theta = r.random_range(0.0..1.0);
            mdc_project(g, v[0], &mask, v[1], theta)
        },
    )?);

    let tiny = tiny_config();
    let block_model = tiny_model(11)?;
    let block_params = block_model.params.tensors().to_vec();
    out.push(run(
        "local_attention",
        seeds,
        &|r| {
            let len = d(r, 2, 8);
            let mut xs = vec![uniform(r, &[len, 8])];
            xs.extend(block_params.iter().cloned());
            xs
        },
        &|g, v, r| {
            let vars = block_model.vars(v[1..].to_vec());
            let l = g.shape(v[0])[0];
            let mask = len_mask(r, l);
            local_attention(g, v[0], &mask, &vars.backbone.blocks[0].attn, 3, 2)
        },
    )?);
    out.push(run(
        "rtlm_block",
        seeds,
        &|r| {
            let len = d(r, 2, 8);
            let mut xs = vec![uniform(r, &[len, 8])];
            xs.extend(block_params.iter().cloned());
            xs
        },
        &|g, v, r| {
            let vars = block_model.vars(v[1..].to_vec());
            let l = g.shape(v[0])[0];
            let mask = len_mask(r, l);
            let x = g.masked_fill(v[0], &mask, 0.0)?;
            rtlm_block(g, x, &mask, &vars.backbone.blocks[0], &tiny)
        },
    )?);
    out.push(run(
        "classify/regress",
        seeds,
        &|r| {
            let mut xs = vec![uniform(r, &[8, 8]), uniform(r, &[4, 8])];
            xs.extend(block_params.iter().cloned());
            xs
        },
        &|g, v, r| {
            let vars = block_model.vars(v[2..].to_vec());
            let m0 = len_mask(r, 8);
            let m1 = crate::backbone::downsample_mask(&m0, 2);
            let l0 = g.masked_fill(v[0], &m0, 0.0)?;
            let l1 = g.masked_fill(v[1], &m1, 0.0)?;
            let pyramid = Pyramid {
                levels: vec![l0, l1],
                masks: vec![m0, m1],
                strides: vec![1, 2],
            };
            let c = classify(g, &pyramid, &vars.cls)?;
            let rg = regress(g, &pyramid, &vars.reg)?;
            let mut parts = Vec::new();
            for (c, rg) in c.into_iter().zip(rg) {
                let both = g.concat_cols(&[c, rg])?;
                parts.push(g.sum(both)?);
                parts.push(probe(g, both, 3)?);
            }
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = g.add(acc, p)?;
            }
            Ok(acc)
        },
    )?);
    for literal in [false, true] {
        let cfg = LossConfig {
            literal_focal: literal,
            ..LossConfig::default()
        };
        let name = if literal { "focal_loss (literal)" } else { "focal_loss" };
        out.push(run(
            name,
            seeds,
            &|r| {
                let n = d(r, 1, 9);
                vec![uniform(r, &[n, 1])]
            },
            &|g, v, r| {
                let n = g.shape(v[0])[0];
                let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
                let mask = len_mask(r, n);
                let p = g.sigmoid(v[0])?;
                focal_sum(g, p, &labels, &mask, &cfg)
            },
        )?);
    }
    out.push(run(
        "diou_loss",
        seeds,
        &|r| {
            let n = d(r, 1, 6);
            vec![Tensor::from_fn(&[n, 2], |_| r.random_range(0.05..3.0)).expect("positive dims")]
        },
        &|g, v, r| {
            let n = g.shape(v[0])[0];
            let mut items = Vec::new();
            for row in 0..n {
                if !r.random_bool(0.8) {
                    continue;
                }
                let a = r.random_range(0.0..4.0);
                items.push(RegressionItem {
                    row,
                    centre: r.random_range(0.0..5.0),
                    unit: r.random_range(0.1..1.0),
                    gt_start: a,
                    gt_end: a + r.random_range(0.1..2.0),
                });
            }
            diou_sum(g, v[0], items)
        },
    )?);
    for (name, literal) in [("full model + total loss", false), ("full model + total loss (literal focal)", true)] {
        let cfg = LossConfig {
            literal_focal: literal,
            lambda: 0.5,
            ..LossConfig::default()
        };
        let mut o = CheckOutcome {
            name: name.into(),
            seeds: full_seeds,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for seed in 0..full_seeds {
            absorb(&mut o, &full_model_check(seed, &cfg)?);
        }
        out.push(o);
    }
    Ok(out)
}

/// Everything, as run by the command-line `gradcheck`.
pub fn full_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = primitive_checks(20)?;
    out.extend(model_checks(20, 3)?);
    Ok(out)
}
