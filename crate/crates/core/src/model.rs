//! Parameter layout, initialisation and the full forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempseg_tensor::{decode_checkpoint, Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::backbone::{
    build_pyramid, downsample_mask, AttentionParams, BackboneParams, BlockParams, Linear,
    LstmParams, NormParams, Pyramid,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::heads::{classify, regress, HeadParams};

pub const INIT_STD: f64 = 0.02;
pub const PRIOR: f64 = 0.01;
/// Initial bias of the offset head. A zero bias behind the final ReLU
/// would give every offset a zero gradient from the first step on.
pub const REG_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Const(f64),
    TruncNormal,
    /// `[d, 4d]` made of four orthogonal `d × d` blocks.
    OrthogonalGates,
}

struct Builder<T: Real> {
    store: ParamStore<T>,
    plan: Vec<Init>,
}

impl<T: Real> Builder<T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let numel = shape.iter().product();
        let t = Tensor::new(shape, vec![T::zero(); numel])?;
        self.plan.push(init);
        Ok(self.store.register(name, t)?)
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<NormParams<ParamId>> {
        Ok(NormParams {
            gamma: self.add(format!("{name}.gamma"), &[d], Init::Ones)?,
            beta: self.add(format!("{name}.beta"), &[d], Init::Zeros)?,
        })
    }

    fn linear(&mut self, name: &str, shape: &[usize], w: Init, b: Init) -> Result<Linear<ParamId>> {
        let out = *shape.last().unwrap();
        Ok(Linear {
            w: self.add(format!("{name}.w"), shape, w)?,
            b: self.add(format!("{name}.b"), &[out], b)?,
        })
    }

    fn head(&mut self, name: &str, d: usize, out: usize, bias: f64) -> Result<HeadParams<ParamId>> {
        let tn = Init::TruncNormal;
        Ok(HeadParams {
            conv1: self.linear(&format!("{name}.conv1"), &[3, d, d], tn, Init::Zeros)?,
            ln1: self.norm(&format!("{name}.ln1"), d)?,
            conv2: self.linear(&format!("{name}.conv2"), &[3, d, d], tn, Init::Zeros)?,
            ln2: self.norm(&format!("{name}.ln2"), d)?,
            out: self.linear(&format!("{name}.out"), &[3, d, out], Init::Zeros, Init::Const(bias))?,
        })
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= 2.0 {
            return x * INIT_STD;
        }
    }
}

/// Orthonormal rows by Gram-Schmidt on a Gaussian matrix.
fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows
}

/// Tape handles for every parameter of a bound model.
pub struct ModelVars {
    pub all: Vec<Var>,
    pub backbone: BackboneParams<Var>,
    pub cls: HeadParams<Var>,
    pub reg: HeadParams<Var>,
}

pub struct ForwardOutput {
    pub pyramid: Pyramid,
    /// `[len_i, 1]` probabilities per level.
    pub cls: Vec<Var>,
    /// `[len_i, 2]` offsets per level.
    pub reg: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    /// Validated configuration with `input_dim` resolved.
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    backbone: BackboneParams<ParamId>,
    cls: HeadParams<ParamId>,
    reg: HeadParams<ParamId>,
}

impl<T: Real> Model<T> {
    fn layout(cfg: &ModelConfig, input_dim: usize) -> Result<(Self, Vec<Init>)> {
        cfg.validate()?;
        if input_dim == 0 || (cfg.input_dim != 0 && cfg.input_dim != input_dim) {
            return Err(Error::Config(format!(
                "input dim {input_dim} does not match configured input_dim {}",
                cfg.input_dim
            )));
        }
        let d = cfg.model_dim;
        let tn = Init::TruncNormal;
        let z = Init::Zeros;
        let mut b = Builder {
            store: ParamStore::new(),
            plan: Vec::new(),
        };
        let mdc = b.add("mdc.w".into(), &[3, input_dim, d], tn)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            let p = format!("block{i}");
            blocks.push(BlockParams {
                ln1: b.norm(&format!("{p}.ln1"), d)?,
                attn: AttentionParams {
                    q: b.linear(&format!("{p}.attn.q"), &[d, d], tn, z)?,
                    k: b.linear(&format!("{p}.attn.k"), &[d, d], tn, z)?,
                    v: b.linear(&format!("{p}.attn.v"), &[d, d], tn, z)?,
                    o: b.linear(&format!("{p}.attn.o"), &[d, d], tn, z)?,
                },
                ln2: b.norm(&format!("{p}.ln2"), d)?,
                lstm: LstmParams {
                    w_ih: b.add(format!("{p}.lstm.w_ih"), &[d, 4 * d], tn)?,
                    w_hh: b.add(format!("{p}.lstm.w_hh"), &[d, 4 * d], Init::OrthogonalGates)?,
                    b: b.add(format!("{p}.lstm.b"), &[4 * d], z)?,
                },
                fuse: b.linear(&format!("{p}.fuse"), &[2 * d, d], tn, z)?,
                ln3: b.norm(&format!("{p}.ln3"), d)?,
                ln4: b.norm(&format!("{p}.ln4"), d)?,
                ffn_in: b.linear(&format!("{p}.ffn.in"), &[d, 4 * d], tn, z)?,
                ffn_out: b.linear(&format!("{p}.ffn.out"), &[4 * d, d], tn, z)?,
            });
        }
        let down = (0..cfg.n_levels)
            .map(|l| b.linear(&format!("down{l}"), &[3, d], tn, z))
            .collect::<Result<Vec<_>>>()?;
        let prior_bias = -((1.0 - PRIOR) / PRIOR).ln();
        let cls = b.head("cls", d, 1, prior_bias)?;
        let reg = b.head("reg", d, 2, REG_BIAS_INIT)?;
        let config = ModelConfig {
            input_dim,
            ..cfg.clone()
        };
        let model = Self {
            config,
            params: b.store,
            backbone: BackboneParams {
                mdc,
                blocks,
                down,
            },
            cls,
            reg,
        };
        Ok((model, b.plan))
    }

    /// Freshly initialised model. Initialisation draws from a generator
    /// seeded with `seed`, in parameter registration order.
    pub fn new(cfg: &ModelConfig, input_dim: usize, seed: u64) -> Result<Self> {
        let (mut model, plan) = Self::layout(cfg, input_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, init) in model.params.tensors_mut().iter_mut().zip(plan) {
            match init {
                Init::Zeros => {}
                Init::Ones => t.data_mut().fill(T::one()),
                Init::Const(c) => t.data_mut().fill(T::of(c)),
                Init::TruncNormal => {
                    for v in t.data_mut() {
                        *v = T::of(trunc_normal(&mut rng));
                    }
                }
                Init::OrthogonalGates => {
                    let d = t.shape()[0];
                    let cols = t.shape()[1];
                    for gate in 0..cols / d {
                        let q = orthogonal(&mut rng, d);
                        for (r, row) in q.iter().enumerate() {
                            for (c, &v) in row.iter().enumerate() {
                                t.data_mut()[r * cols + gate * d + c] = T::of(v);
                            }
                        }
                    }
                }
            }
        }
        Ok(model)
    }

    /// Model with parameters taken from a checkpoint.
    pub fn from_checkpoint(cfg: &ModelConfig, input_dim: usize, bytes: &[u8]) -> Result<Self> {
        let (mut model, _) = Self::layout(cfg, input_dim)?;
        model.params.load_entries(&decode_checkpoint(bytes)?)?;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_checkpoint()?)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            cls: self.cls,
            reg: self.reg,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// Put every parameter on the tape.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> ModelVars {
        let all = self.params.bind(g, requires_grad);
        self.vars(all)
    }

    /// Structure already-bound parameter nodes, given in registration order.
    pub fn vars(&self, all: Vec<Var>) -> ModelVars {
        assert_eq!(all.len(), self.params.len(), "one node per parameter");
        ModelVars {
            backbone: self.backbone.map(&|id: ParamId| all[id.0]),
            cls: self.cls.map(&|id: ParamId| all[id.0]),
            reg: self.reg.map(&|id: ParamId| all[id.0]),
            all,
        }
    }

    /// Shortest input the pyramid accepts.
    pub fn min_len(&self) -> usize {
        self.config.downsample_stride.pow(self.config.n_levels as u32 - 1)
    }

    /// `frames` is `[len, input_dim]`; `mask` flags valid rows.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &ModelVars,
        frames: Var,
        mask: &[bool],
    ) -> Result<ForwardOutput> {
        if g.shape(frames).get(1) != Some(&self.config.input_dim) {
            return Err(Error::Data(format!(
                "features {:?} do not match model input dim {}",
                g.shape(frames),
                self.config.input_dim
            )));
        }
        let pyramid = build_pyramid(g, frames, mask, &vars.backbone, &self.config)?;
        let cls = classify(g, &pyramid, &vars.cls)?;
        let reg = regress(g, &pyramid, &vars.reg)?;
        Ok(ForwardOutput { pyramid, cls, reg })
    }
}

/// Level masks the pyramid will produce for an input mask, without running
/// the network.
pub fn level_masks(mask: &[bool], cfg: &ModelConfig) -> Vec<Vec<bool>> {
    let mut out = Vec::with_capacity(cfg.n_levels);
    let mut m = mask.to_vec();
    for l in 0..cfg.n_levels {
        if l > 0 {
            m = downsample_mask(&m, cfg.downsample_stride);
        }
        out.push(m.clone());
    }
    out
}

/// `[rows, dim]` tensor of a sequence's frames in the working precision.
pub fn frames_tensor<T: Real>(frames: &[f32], dim: usize) -> Result<Tensor<T>> {
    let rows = frames.len() / dim;
    Ok(Tensor::new(
        [rows, dim],
        frames.iter().map(|&v| T::of(f64::from(v))).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            n_blocks: 2,
            n_levels: 2,
            window_size: 3,
            n_heads: 2,
            m_max: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::<f32>::new(&tiny(), 4, 1).unwrap();
        let b = Model::<f32>::new(&tiny(), 4, 1).unwrap();
        let c = Model::<f32>::new(&tiny(), 4, 2).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let m = Model::<f64>::new(&tiny(), 4, 3).unwrap();
        let (_, w) = m.params.iter().find(|(n, _)| *n == "block0.lstm.w_hh").unwrap();
        let (d, cols) = (8, 32);
        for gate in 0..4 {
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..d)
                        .map(|c| w.data()[i * cols + gate * d + c] * w.data()[j * cols + gate * d + c])
                        .sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn classification_prior() {
        let m = Model::<f64>::new(&tiny(), 4, 0).unwrap();
        let (_, b) = m.params.iter().find(|(n, _)| *n == "cls.out.b").unwrap();
        let p = 1.0 / (1.0 + (-b.data()[0]).exp());
        assert!((p - PRIOR).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::<f32>::new(&tiny(), 4, 5).unwrap();
        let back = Model::<f32>::from_checkpoint(&tiny(), 4, &m.to_checkpoint().unwrap()).unwrap();
        assert_eq!(m.params, back.params);
        assert!(Model::<f32>::from_checkpoint(&tiny(), 5, &m.to_checkpoint().unwrap()).is_err());
    }

    #[test]
    fn level_masks_follow_the_pyramid() {
        let cfg = ModelConfig {
            n_levels: 3,
            n_blocks: 3,
            ..tiny()
        };
        let mask: Vec<bool> = (0..9).map(|i| i < 5).collect();
        let m = level_masks(&mask, &cfg);
        assert_eq!(m[1], vec![true, true, true, false, false]);
        assert_eq!(m[2], vec![true, true, false]);
    }
}
