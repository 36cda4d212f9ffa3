//! AdamW with warmup + cosine schedule, per-sample tapes reduced in a fixed
//! order, per-epoch checkpoints and a CSV loss log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempseg_tensor::{Graph, Real, Tensor};

use crate::config::{ExperimentConfig, LossConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::featio::{load_features, DatasetManifest, FeatureSequence, Modality, SegmentSet};
use crate::heads::{assign_targets, RegressionRanges, Targets};
use crate::loss::total_loss;
use crate::model::{frames_tensor, level_masks, Model};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `step` (the k-th update uses `step = k + 1`): linear
/// from 0 to `lr0` over the warmup steps, then half-cosine down to 0 at the
/// last step.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warm {
        return cfg.lr0 * step as f64 / warm as f64;
    }
    if total <= warm {
        return if step == warm { cfg.lr0 } else { 0.0 };
    }
    let progress = ((step - warm) as f64 / (total - warm) as f64).min(1.0);
    cfg.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    /// Updates skipped because of a non-finite gradient.
    pub skipped: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
            skipped: 0,
        }
    }
}

/// One decoupled-decay Adam update:
/// `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`. A non-finite gradient skips the step
/// and returns `false`.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<bool> {
    if grads.len() != params.len() || params.iter().zip(grads).any(|(p, g)| p.numel() != g.len()) {
        return Err(Error::Data("gradient shapes do not match parameters".into()));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(false);
    }
    state.t += 1;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let c1 = T::of(1.0 - BETA1.powi(state.t as i32));
    let c2 = T::of(1.0 - BETA2.powi(state.t as i32));
    let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(ADAM_EPS));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - lr * (mh / (vh.sqrt() + eps) + wd * *p);
        }
    }
    Ok(true)
}

/// A training sequence and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub sequence: FeatureSequence,
    pub segments: SegmentSet,
}

/// Load every manifest entry of the selected modality. `None` requires the
/// manifest to hold a single modality. All sequences must share one dim.
pub fn load_dataset(manifest: &DatasetManifest, modality: Option<Modality>) -> Result<Vec<TrainSample>> {
    let mut present: Vec<Modality> = manifest.entries.iter().map(|e| e.modality).collect();
    present.dedup();
    present.sort_by_key(|m| m.tag());
    present.dedup();
    let chosen = match modality {
        Some(m) => m,
        None if present.len() == 1 => present[0],
        None => {
            return Err(Error::Data(format!(
                "manifest mixes modalities ({}); set modality in the config",
                present.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.modality == chosen) {
        let mut sequence = load_features(&e.feature_path)?;
        sequence.id = e.annotation.id.clone();
        out.push(TrainSample {
            sequence,
            segments: e.annotation.segments.clone(),
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no {chosen} sequences in the manifest")));
    }
    let dim = out[0].sequence.dim;
    if let Some(bad) = out.iter().find(|s| s.sequence.dim != dim) {
        return Err(Error::Data(format!(
            "dim mismatch across manifest: {} has {}, expected {dim}",
            bad.sequence.id, bad.sequence.dim
        )));
    }
    Ok(out)
}

struct Prepared {
    frames: Tensor<f32>,
    mask: Vec<bool>,
    targets: Targets,
    fps: f64,
    positives: usize,
}

fn prepare(samples: &[TrainSample], cfg: &ExperimentConfig) -> Result<Vec<Prepared>> {
    let ranges = RegressionRanges::for_model(&cfg.model)?;
    let strides = cfg.model.level_strides();
    samples
        .iter()
        .map(|s| {
            let padded = s.sequence.pad_or_truncate(cfg.model.m_max);
            let fps = f64::from(s.sequence.feature_fps);
            let masks = level_masks(&padded.mask, &cfg.model);
            let targets = assign_targets(&s.segments, &masks, &strides, fps, &ranges)?;
            Ok(Prepared {
                frames: frames_tensor(&padded.frames, padded.dim)?,
                mask: padded.mask,
                positives: targets.n_positive(),
                targets,
                fps,
            })
        })
        .collect()
}

struct SampleResult {
    grads: Vec<Vec<f32>>,
    total: f64,
    cls: f64,
    reg: f64,
}

fn sample_step(model: &Model<f32>, s: &Prepared, loss: &LossConfig, normaliser: f64) -> Result<SampleResult> {
    let mut g = Graph::<f32>::new();
    let vars = model.bind(&mut g, true);
    let x = g.constant(s.frames.clone());
    let out = model.forward(&mut g, &vars, x, &s.mask)?;
    let l = total_loss(
        &mut g,
        &out.cls,
        &out.reg,
        &out.pyramid.masks,
        &out.pyramid.strides,
        &s.targets,
        s.fps,
        loss,
        normaliser,
    )?;
    g.backward(l.total)?;
    Ok(SampleResult {
        grads: model.params.collect_grads(&g, &vars.all),
        total: f64::from(g.value(l.total).data()[0]),
        cls: l.cls,
        reg: l.reg,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Updates taken so far.
    pub step: usize,
    /// Rate of the epoch's last update.
    pub lr: f64,
    /// Means over the epoch's batches.
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,lr,total,cls,reg";

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for e in log {
        let _ = writeln!(out, "{},{},{:e},{:e},{:e},{:e}", e.epoch, e.step, e.lr, e.total, e.cls, e.reg);
    }
    out
}

pub struct TrainOutput {
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
    pub skipped_steps: u64,
}

/// Train from scratch. `on_epoch` sees the model after every epoch.
pub fn train(
    samples: &[TrainSample],
    cfg: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Model<f32>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let dim = samples[0].sequence.dim;
    if let Some(bad) = samples.iter().find(|s| s.sequence.dim != dim) {
        return Err(Error::Data(format!(
            "dim mismatch: {} has {}, expected {dim}",
            bad.sequence.id, bad.sequence.dim
        )));
    }
    let tc = &cfg.train;
    let mut model = Model::<f32>::new(&cfg.model, dim, tc.seed)?;
    if cfg.model.m_max < model.min_len() {
        return Err(Error::Config(format!(
            "m_max {} is shorter than the {} frames {} levels need",
            cfg.model.m_max,
            model.min_len(),
            cfg.model.n_levels
        )));
    }
    let data = prepare(samples, cfg)?;
    let workers = if tc.deterministic { 1 } else { tc.workers };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5EED_0F_DA7A);
    let mut state = AdamState::new(model.params.tensors());
    let steps_per_epoch = samples.len().div_ceil(tc.batch_size);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_cls, mut sum_reg) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let positives: usize = batch.iter().map(|&i| data[i].positives).sum();
            let normaliser = positives.max(1) as f64;
            let results: Vec<Result<SampleResult>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| sample_step(&model, &data[i], &cfg.loss, normaliser))
                    .collect()
            });
            let mut grads: Option<Vec<Vec<f32>>> = None;
            for r in results {
                let r = r?;
                sum_total += r.total;
                sum_cls += r.cls;
                sum_reg += r.reg;
                match &mut grads {
                    None => grads = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            a.iter_mut().zip(g).for_each(|(a, g)| *a += *g);
                        }
                    }
                }
            }
            step += 1;
            lr = lr_schedule(step, steps_per_epoch, tc);
            let grads = grads.expect("batches are non-empty");
            adamw_step(model.params.tensors_mut(), &grads, &mut state, lr, tc.weight_decay)?;
        }
        let n = steps_per_epoch as f64;
        let entry = EpochLog {
            epoch,
            step,
            lr,
            total: sum_total / n,
            cls: sum_cls / n,
            reg: sum_reg / n,
        };
        on_epoch(&entry, &model)?;
        log.push(entry);
    }
    Ok(TrainOutput {
        model,
        log,
        skipped_steps: state.skipped,
    })
}

/// Files written by [`train_to_dir`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoints: Vec<PathBuf>,
    pub final_model: PathBuf,
    pub loss_csv: PathBuf,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.tpk")
}

/// Train and write `epoch_NNN.tpk` per epoch, `model.tpk` and `loss.csv`.
pub fn train_to_dir(
    samples: &[TrainSample],
    cfg: &ExperimentConfig,
    out: &Path,
    mut progress: impl FnMut(&EpochLog),
) -> Result<(TrainOutput, TrainArtifacts)> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut checkpoints = Vec::new();
    let result = train(samples, cfg, |entry, model| {
        let path = out.join(checkpoint_name(entry.epoch));
        fs::write(&path, model.to_checkpoint()?).map_err(|e| Error::io(&path, e))?;
        checkpoints.push(path);
        progress(entry);
        Ok(())
    })?;
    let final_model = out.join("model.tpk");
    fs::write(&final_model, result.model.to_checkpoint()?).map_err(|e| Error::io(&final_model, e))?;
    let loss_path = out.join("loss.csv");
    fs::write(&loss_path, loss_csv(&result.log)).map_err(|e| Error::io(&loss_path, e))?;
    Ok((
        result,
        TrainArtifacts {
            checkpoints,
            final_model,
            loss_csv: loss_path,
        },
    ))
}
