//! Configuration types and the flat `key = value` file format.
//!
//! One file covers the model, loss, training and inference settings. Blank
//! lines and `#` comments are ignored; every key is optional and falls back
//! to its default.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::featio::Modality;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Feature dimension of the input. `0` means "take it from the data".
    pub input_dim: usize,
    pub model_dim: usize,
    pub n_blocks: usize,
    pub n_levels: usize,
    /// Full width of the local attention window (odd).
    pub window_size: usize,
    pub n_heads: usize,
    /// Intensity/gradient balance of the differential projection.
    pub theta: f64,
    pub downsample_stride: usize,
    /// Sequences are padded or truncated to this many feature frames.
    pub m_max: usize,
    /// Interior boundaries of the per-level regression ranges in level-0
    /// feature units; empty means powers of two from 64.
    pub regression_ranges: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            model_dim: 256,
            n_blocks: 6,
            n_levels: 5,
            window_size: 9,
            n_heads: 4,
            theta: 0.6,
            downsample_stride: 2,
            m_max: 1024,
            regression_ranges: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.model_dim == 0 || self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return fail(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if self.n_levels == 0 || self.n_levels > self.n_blocks {
            return fail(format!(
                "n_levels {} must be in 1..=n_blocks ({})",
                self.n_levels, self.n_blocks
            ));
        }
        if self.window_size % 2 == 0 {
            return fail(format!("window_size {} must be odd", self.window_size));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return fail(format!("theta {} must lie in [0, 1]", self.theta));
        }
        if self.downsample_stride < 1 {
            return fail("downsample_stride must be >= 1".into());
        }
        if self.m_max == 0 {
            return fail("m_max must be >= 1".into());
        }
        if !self.regression_ranges.is_empty() {
            let r = &self.regression_ranges;
            if r.len() + 1 != self.n_levels {
                return fail(format!(
                    "regression_ranges needs {} boundaries for {} levels, got {}",
                    self.n_levels - 1,
                    self.n_levels,
                    r.len()
                ));
            }
            if r[0] <= 0.0 || r.windows(2).any(|w| w[1] <= w[0]) || r.iter().any(|v| !v.is_finite()) {
                return fail("regression_ranges must be positive and strictly increasing".into());
            }
        }
        Ok(())
    }

    /// Cumulative stride of each pyramid level relative to the input grid.
    pub fn level_strides(&self) -> Vec<usize> {
        (0..self.n_levels)
            .map(|i| self.downsample_stride.pow(i as u32))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Use the positives-only, additive-modulator classification term
    /// instead of the standard focal loss.
    pub literal_focal: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            literal_focal: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} must lie in [0, 1]", self.lambda)));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_gamma must be >= 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config("focal_alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Which sequences of the manifest to train on. `None` (`auto`) takes
    /// the single modality the manifest holds.
    pub modality: Option<Modality>,
    /// Single worker, fixed reduction order.
    pub deterministic: bool,
    /// Gradient workers when not deterministic; `0` uses every core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 1e-2,
            warmup_epochs: 5,
            epochs: 15,
            batch_size: 64,
            seed: 0,
            modality: None,
            deterministic: false,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr0 >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr0 and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    pub pre_nms_threshold: f64,
    pub pre_nms_topk: usize,
    pub nms_iou: f64,
    pub max_outputs: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            pre_nms_threshold: 0.1,
            pre_nms_topk: 200,
            nms_iou: 0.6,
            max_outputs: 50,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pre_nms_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.pre_nms_topk < self.max_outputs {
            return Err(Error::Config(format!(
                "pre_nms_topk {} must be >= max_outputs {}",
                self.pre_nms_topk, self.max_outputs
            )));
        }
        Ok(())
    }
}

/// Everything a run needs, as read from one config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

pub const CONFIG_KEYS: &[&str] = &[
    "input_dim",
    "model_dim",
    "n_blocks",
    "n_levels",
    "window_size",
    "n_heads",
    "theta",
    "downsample_stride",
    "m_max",
    "regression_ranges",
    "lambda",
    "focal_gamma",
    "focal_alpha",
    "literal_focal",
    "lr0",
    "weight_decay",
    "warmup_epochs",
    "epochs",
    "batch_size",
    "seed",
    "modality",
    "deterministic",
    "workers",
    "pre_nms_threshold",
    "pre_nms_topk",
    "nms_iou",
    "max_outputs",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Parse the `key = value` format. Unknown keys are rejected with the
    /// list of valid ones.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut warmup_given = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            warmup_given |= key == "warmup_epochs";
            cfg.set(key, value.trim())?;
        }
        // An explicit warmup longer than the run is an error; the default
        // one shrinks to fit short runs.
        if !warmup_given {
            cfg.train.warmup_epochs = cfg.train.warmup_epochs.min(cfg.train.epochs);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, l, t, i) = (&mut self.model, &mut self.loss, &mut self.train, &mut self.infer);
        match key {
            "input_dim" => m.input_dim = parse(key, v)?,
            "model_dim" => m.model_dim = parse(key, v)?,
            "n_blocks" => m.n_blocks = parse(key, v)?,
            "n_levels" => m.n_levels = parse(key, v)?,
            "window_size" => m.window_size = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "theta" => m.theta = parse(key, v)?,
            "downsample_stride" => m.downsample_stride = parse(key, v)?,
            "m_max" => m.m_max = parse(key, v)?,
            "regression_ranges" => m.regression_ranges = parse_list(key, v)?,
            "lambda" => l.lambda = parse(key, v)?,
            "focal_gamma" => l.focal_gamma = parse(key, v)?,
            "focal_alpha" => l.focal_alpha = parse(key, v)?,
            "literal_focal" => l.literal_focal = parse_bool(key, v)?,
            "lr0" => t.lr0 = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "warmup_epochs" => t.warmup_epochs = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "modality" => {
                t.modality = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "deterministic" => t.deterministic = parse_bool(key, v)?,
            "workers" => t.workers = parse(key, v)?,
            "pre_nms_threshold" => i.pre_nms_threshold = parse(key, v)?,
            "pre_nms_topk" => i.pre_nms_topk = parse(key, v)?,
            "nms_iou" => i.nms_iou = parse(key, v)?,
            "max_outputs" => i.max_outputs = parse(key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.infer.validate()
    }

    /// Serialise every key, in [`CONFIG_KEYS`] order. Floats use Rust's
    /// shortest round-trip formatting so `from_kv(to_kv())` is exact.
    pub fn to_kv(&self) -> String {
        let (m, l, t, i) = (&self.model, &self.loss, &self.train, &self.infer);
        let ranges = m
            .regression_ranges
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        let values: [String; 27] = [
            m.input_dim.to_string(),
            m.model_dim.to_string(),
            m.n_blocks.to_string(),
            m.n_levels.to_string(),
            m.window_size.to_string(),
            m.n_heads.to_string(),
            format!("{:?}", m.theta),
            m.downsample_stride.to_string(),
            m.m_max.to_string(),
            ranges,
            format!("{:?}", l.lambda),
            format!("{:?}", l.focal_gamma),
            format!("{:?}", l.focal_alpha),
            l.literal_focal.to_string(),
            format!("{:?}", t.lr0),
            format!("{:?}", t.weight_decay),
            t.warmup_epochs.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.seed.to_string(),
            t.modality.map_or("auto".to_string(), |m| m.to_string()),
            t.deterministic.to_string(),
            t.workers.to_string(),
            format!("{:?}", i.pre_nms_threshold),
            i.pre_nms_topk.to_string(),
            format!("{:?}", i.nms_iou),
            i.max_outputs.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
