//! Differential projection, R-TLM blocks and the multi-scale pyramid.
//!
//! Parameter groups are generic over the handle type so the same layout
//! describes stored parameters (`ParamId`) and their bound tape nodes (`Var`).

use tempseg_tensor::{Graph, Real, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct NormParams<H> {
    pub gamma: H,
    pub beta: H,
}

impl<H: Copy> NormParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> NormParams<U> {
        NormParams {
            gamma: f(self.gamma),
            beta: f(self.beta),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear<H> {
    pub w: H,
    pub b: H,
}

impl<H: Copy> Linear<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> Linear<U> {
        Linear {
            w: f(self.w),
            b: f(self.b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams<H> {
    pub q: Linear<H>,
    pub k: Linear<H>,
    pub v: Linear<H>,
    pub o: Linear<H>,
}

impl<H: Copy> AttentionParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> AttentionParams<U> {
        AttentionParams {
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            o: self.o.map(f),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams<H> {
    /// `[d, 4d]`
    pub w_ih: H,
    /// `[d, 4d]`
    pub w_hh: H,
    /// `[4d]`
    pub b: H,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams<H> {
    pub ln1: NormParams<H>,
    pub attn: AttentionParams<H>,
    pub ln2: NormParams<H>,
    pub lstm: LstmParams<H>,
    /// `[2d, d]` projection of `[y ; h]`.
    pub fuse: Linear<H>,
    pub ln3: NormParams<H>,
    pub ln4: NormParams<H>,
    pub ffn_in: Linear<H>,
    pub ffn_out: Linear<H>,
}

impl<H: Copy> BlockParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> BlockParams<U> {
        BlockParams {
            ln1: self.ln1.map(f),
            attn: self.attn.map(f),
            ln2: self.ln2.map(f),
            lstm: LstmParams {
                w_ih: f(self.lstm.w_ih),
                w_hh: f(self.lstm.w_hh),
                b: f(self.lstm.b),
            },
            fuse: self.fuse.map(f),
            ln3: self.ln3.map(f),
            ln4: self.ln4.map(f),
            ffn_in: self.ffn_in.map(f),
            ffn_out: self.ffn_out.map(f),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams<H> {
    /// `[3, input_dim, model_dim]`
    pub mdc: H,
    pub blocks: Vec<BlockParams<H>>,
    /// Depthwise `[3, d]` kernels and `[d]` biases, one per pyramid level.
    pub down: Vec<Linear<H>>,
}

impl<H: Copy> BackboneParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> BackboneParams<U> {
        BackboneParams {
            mdc: f(self.mdc),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            down: self.down.iter().map(|d| d.map(f)).collect(),
        }
    }
}

/// Masked differential convolution with offsets `{-1, 0, +1}`:
/// `out(t) = Σ_k w_k·z(t+k) − θ·z(t)·Σ_k w_k`. Masked rows are zeroed on
/// input and output. `w` is `[3, c_in, c_out]`.
pub fn mdc_project<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    mask: &[bool],
    w: Var,
    theta: f64,
) -> Result<Var> {
    let wshape = g.shape(w).to_vec();
    if wshape.len() != 3 || wshape[0] != 3 || g.shape(z).get(1) != Some(&wshape[1]) {
        return Err(Error::Config(format!(
            "projection weight {wshape:?} does not fit input {:?}",
            g.shape(z)
        )));
    }
    let (cin, cout) = (wshape[1], wshape[2]);
    let z = g.masked_fill(z, mask, T::zero())?;
    let conv = g.conv1d(z, w, None, 1, 1)?;
    let out = if theta == 0.0 {
        conv
    } else {
        let flat = g.reshape(w, [3, cin * cout])?;
        let wsum = g.sum_rows(flat)?;
        let wsum = g.reshape(wsum, [cin, cout])?;
        let centre = g.matmul(z, wsum)?;
        let centre = g.scale(centre, T::of(theta))?;
        g.sub(conv, centre)?
    };
    Ok(g.masked_fill(out, mask, T::zero())?)
}

fn linear<T: Real>(g: &mut Graph<T>, x: Var, p: &Linear<Var>) -> Result<Var> {
    let y = g.matmul(x, p.w)?;
    Ok(g.add_row(y, p.b)?)
}

fn norm<T: Real>(g: &mut Graph<T>, x: Var, p: &NormParams<Var>) -> Result<Var> {
    Ok(g.layer_norm(x, p.gamma, p.beta, T::of(LN_EPS))?)
}

/// Multi-head self-attention where each position sees only valid positions
/// within `window / 2` steps of itself.
pub fn local_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    mask: &[bool],
    p: &AttentionParams<Var>,
    window: usize,
    heads: usize,
) -> Result<Var> {
    let q = linear(g, x, &p.q)?;
    let k = linear(g, x, &p.k)?;
    let v = linear(g, x, &p.v)?;
    let a = g.windowed_attention(q, k, v, mask, window, heads)?;
    linear(g, a, &p.o)
}

/// One pre-norm R-TLM block:
///
/// ```text
/// u = LN1(x)
/// y = LN2(x + MSA_local(u))
/// h = LSTM(u)
/// z = LN3(y + [y ; h]·W_f + b_f)
/// out = z + FFN(LN4(z))
/// ```
///
/// Padded rows of the output are zero.
pub fn rtlm_block<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    mask: &[bool],
    p: &BlockParams<Var>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let u = norm(g, x, &p.ln1)?;
    let u = g.masked_fill(u, mask, T::zero())?;
    let a = local_attention(g, u, mask, &p.attn, cfg.window_size, cfg.n_heads)?;
    let y = g.add(x, a)?;
    let y = norm(g, y, &p.ln2)?;
    let h = g.lstm(u, p.lstm.w_ih, p.lstm.w_hh, p.lstm.b)?;
    let yh = g.concat_cols(&[y, h])?;
    let f = linear(g, yh, &p.fuse)?;
    let z = g.add(y, f)?;
    let z = norm(g, z, &p.ln3)?;
    let n = norm(g, z, &p.ln4)?;
    let hid = linear(g, n, &p.ffn_in)?;
    let hid = g.relu(hid)?;
    let ffn = linear(g, hid, &p.ffn_out)?;
    let out = g.add(z, ffn)?;
    Ok(g.masked_fill(out, mask, T::zero())?)
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    /// One `[len_i, model_dim]` node per level, padded rows zeroed.
    pub levels: Vec<Var>,
    pub masks: Vec<Vec<bool>>,
    /// Cumulative stride of each level on the input feature grid.
    pub strides: Vec<usize>,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Level lengths for an input of `len` frames: a ceil-division chain.
pub fn level_lengths(len: usize, n_levels: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_levels);
    let mut l = len;
    for i in 0..n_levels {
        if i > 0 {
            l = l.div_ceil(stride);
        }
        out.push(l);
    }
    out
}

/// A coarse position is valid iff any fine position it covers is valid.
pub fn downsample_mask(mask: &[bool], stride: usize) -> Vec<bool> {
    mask.chunks(stride).map(|c| c.iter().any(|&m| m)).collect()
}

/// Run the projection and block stack. The first `N − L` blocks refine at
/// full rate; each of the last `L` is followed by a depthwise kernel-3 conv
/// whose output is both a pyramid level and the next block's input. The
/// first tapped level keeps stride 1, later ones downsample.
pub fn build_pyramid<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    mask: &[bool],
    p: &BackboneParams<Var>,
    cfg: &ModelConfig,
) -> Result<Pyramid> {
    let len = g.shape(z)[0];
    let need = cfg.downsample_stride.pow(cfg.n_levels as u32 - 1);
    if len < need {
        return Err(Error::Data(format!(
            "insufficient length for {} levels: {len} frames, need at least {need}",
            cfg.n_levels
        )));
    }
    if mask.len() != len {
        return Err(Error::Data(format!("mask of {} for {len} frames", mask.len())));
    }
    let mut x = mdc_project(g, z, mask, p.mdc, cfg.theta)?;
    let mut mask = mask.to_vec();
    let tap_from = cfg.n_blocks - cfg.n_levels;
    let mut pyramid = Pyramid {
        levels: Vec::with_capacity(cfg.n_levels),
        masks: Vec::with_capacity(cfg.n_levels),
        strides: cfg.level_strides(),
    };
    for (i, block) in p.blocks.iter().enumerate() {
        x = rtlm_block(g, x, &mask, block, cfg)?;
        if i < tap_from {
            continue;
        }
        let level = i - tap_from;
        let stride = if level == 0 { 1 } else { cfg.downsample_stride };
        let down = &p.down[level];
        x = g.depthwise_conv1d(x, down.w, Some(down.b), stride, 1)?;
        mask = downsample_mask(&mask, stride);
        x = g.masked_fill(x, &mask, T::zero())?;
        pyramid.levels.push(x);
        pyramid.masks.push(mask.clone());
    }
    Ok(pyramid)
}

/// Feature-grid position of level-local index `tau` at cumulative stride
/// `stride`: `floor(stride/2) + tau·stride`.
pub fn to_raw_index(tau: usize, stride: usize) -> usize {
    stride / 2 + tau * stride
}

/// [`to_raw_index`] in seconds.
pub fn to_raw_timestamp(tau: usize, stride: usize, feature_fps: f64) -> f64 {
    to_raw_index(tau, stride) as f64 / feature_fps
}
