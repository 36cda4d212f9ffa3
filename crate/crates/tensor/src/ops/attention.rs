//! Banded multi-head attention.
//!
//! Query `t` attends to keys `s` with `|s − t| ≤ window/2` and `key_valid[s]`.
//! Keys outside the band are never read, so their values cannot influence
//! the output at `t`. A query with no admissible key outputs zeros.

use crate::error::{invalid, shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::{Real, Tensor};

struct WindowedAttention<T> {
    heads: usize,
    half: usize,
    key_valid: Vec<bool>,
    /// Softmax weights `[len, heads, window]`, zero where inadmissible.
    weights: Vec<T>,
}

impl<T: Real> WindowedAttention<T> {
    fn window(&self) -> usize {
        2 * self.half + 1
    }

    /// Key index for band slot `j` of query `t`, if admissible.
    #[inline]
    fn key(&self, t: usize, j: usize) -> Option<usize> {
        (t + j)
            .checked_sub(self.half)
            .filter(|&s| s < self.key_valid.len() && self.key_valid[s])
    }
}

impl<T: Real> Function<T> for WindowedAttention<T> {
    fn name(&self) -> &'static str {
        "windowed_attention"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let d = inputs[0].cols();
        let len = inputs[0].rows();
        let dh = d / self.heads;
        let w = self.window();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); k.len()];
        let mut dv = vec![T::zero(); v.len()];
        let mut da = vec![T::zero(); w];
        for t in 0..len {
            for h in 0..self.heads {
                let off = h * dh;
                let a = &self.weights[(t * self.heads + h) * w..(t * self.heads + h + 1) * w];
                let go = &g[t * d + off..t * d + off + dh];
                let mut s_ada = T::zero();
                for j in 0..w {
                    da[j] = T::zero();
                    let Some(s) = self.key(t, j) else { continue };
                    let vs = &v[s * d + off..s * d + off + dh];
                    let mut acc = T::zero();
                    for c in 0..dh {
                        acc += go[c] * vs[c];
                        dv[s * d + off + c] += a[j] * go[c];
                    }
                    da[j] = acc;
                    s_ada += a[j] * acc;
                }
                for j in 0..w {
                    let Some(s) = self.key(t, j) else { continue };
                    let dl = a[j] * (da[j] - s_ada) * scale;
                    if dl == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dq[t * d + off + c] += dl * k[s * d + off + c];
                        dk[s * d + off + c] += dl * q[t * d + off + c];
                    }
                }
            }
        }
        vec![Some(dq), Some(dk), Some(dv)]
    }
}

impl<T: Real> Graph<T> {
    /// Multi-head attention restricted to a sliding window of odd width
    /// `window`. `q`, `k`, `v` are `[len, d]` with `d` divisible by `heads`;
    /// logits are scaled by `1/sqrt(d/heads)`.
    pub fn windowed_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_valid: &[bool],
        window: usize,
        heads: usize,
    ) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(k) != shape || self.shape(v) != shape || shape.len() != 2 {
            return Err(shape_err("windowed_attention", "q, k, v must share a [len, d] shape"));
        }
        let (len, d) = (shape[0], shape[1]);
        if window % 2 == 0 {
            return Err(invalid("windowed_attention", "window must be odd"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(invalid("windowed_attention", "d not divisible by heads"));
        }
        if key_valid.len() != len {
            return Err(shape_err("windowed_attention", "mask length != sequence length"));
        }
        let mut f = WindowedAttention {
            heads,
            half: window / 2,
            key_valid: key_valid.to_vec(),
            weights: vec![T::zero(); len * heads * window],
        };
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut out = vec![T::zero(); len * d];
        let mut logits = vec![T::neg_infinity(); window];
        for t in 0..len {
            for h in 0..heads {
                let off = h * dh;
                let qt = &qd[t * d + off..t * d + off + dh];
                let mut max = T::neg_infinity();
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = T::neg_infinity();
                    let Some(s) = f.key(t, j) else { continue };
                    let ks = &kd[s * d + off..s * d + off + dh];
                    let mut acc = T::zero();
                    for c in 0..dh {
                        acc += qt[c] * ks[c];
                    }
                    *l = acc * scale;
                    max = max.max(*l);
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let a = &mut f.weights[(t * heads + h) * window..(t * heads + h + 1) * window];
                let mut sum = T::zero();
                for (aj, &l) in a.iter_mut().zip(&logits) {
                    *aj = if l == T::neg_infinity() {
                        T::zero()
                    } else {
                        (l - max).exp()
                    };
                    sum += *aj;
                }
                for aj in a.iter_mut() {
                    *aj = *aj / sum;
                }
                let o = &mut out[t * d + off..t * d + off + dh];
                for (j, &aj) in a.iter().enumerate() {
                    let Some(s) = (t + j)
                        .checked_sub(f.half)
                        .filter(|&s| s < len && key_valid[s])
                    else {
                        continue;
                    };
                    for (oc, &vc) in o.iter_mut().zip(&vd[s * d + off..s * d + off + dh]) {
                        *oc += aj * vc;
                    }
                }
            }
        }
        let out = Tensor::new([len, d], out)?;
        self.record(out, &[q, k, v], Box::new(f))
    }
}
