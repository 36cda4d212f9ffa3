//! 1-D convolutions over the leading (time) axis of `[len, channels]` inputs.
//!
//! Both variants are cross-correlations with symmetric zero padding:
//! `out[o] = Σ_j w[j] · x[o·stride + j − pad]`, and
//! `out_len = (len + 2·pad − k) / stride + 1`.

use crate::error::{invalid, shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::ops::kernels::{col_sums, gemm, gemm_nt, gemm_tn};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    len: usize,
    out_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(op: &'static str, len: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride < 1 {
            return Err(invalid(op, "stride must be >= 1"));
        }
        if len + 2 * pad < k {
            return Err(shape_err(
                op,
                format!("kernel {k} longer than padded length {}", len + 2 * pad),
            ));
        }
        Ok(Self {
            len,
            out_len: (len + 2 * pad - k) / stride + 1,
            k,
            stride,
            pad,
        })
    }

    /// Input row read by output `o` through tap `j`, if inside the sequence.
    #[inline]
    fn source(&self, o: usize, j: usize) -> Option<usize> {
        (o * self.stride + j)
            .checked_sub(self.pad)
            .filter(|&i| i < self.len)
    }
}

/// Unfold `x[len, c]` into `[out_len, k·c]`.
fn im2col<T: Real>(x: &[T], c: usize, geo: &Geometry) -> Vec<T> {
    let width = geo.k * c;
    let mut col = vec![T::zero(); geo.out_len * width];
    for o in 0..geo.out_len {
        for j in 0..geo.k {
            if let Some(i) = geo.source(o, j) {
                col[o * width + j * c..o * width + (j + 1) * c]
                    .copy_from_slice(&x[i * c..(i + 1) * c]);
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], c: usize, geo: &Geometry) -> Vec<T> {
    let width = geo.k * c;
    let mut x = vec![T::zero(); geo.len * c];
    for o in 0..geo.out_len {
        for j in 0..geo.k {
            if let Some(i) = geo.source(o, j) {
                let src = &col[o * width + j * c..o * width + (j + 1) * c];
                for (d, &s) in x[i * c..(i + 1) * c].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    x
}

struct Conv1d {
    geo: Geometry,
    cin: usize,
    cout: usize,
    has_bias: bool,
}

impl<T: Real> Function<T> for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geo = &self.geo;
        let width = geo.k * self.cin;
        let col = im2col(inputs[0].data(), self.cin, geo);
        let dw = gemm_tn(&col, g, geo.out_len, width, self.cout);
        let dcol = gemm_nt(g, inputs[1].data(), geo.out_len, self.cout, width);
        let dx = col2im(&dcol, self.cin, geo);
        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            out.push(Some(col_sums(g, geo.out_len, self.cout)));
        }
        out
    }
}

struct DepthwiseConv1d {
    geo: Geometry,
    c: usize,
    has_bias: bool,
}

impl<T: Real> Function<T> for DepthwiseConv1d {
    fn name(&self) -> &'static str {
        "depthwise_conv1d"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (geo, c) = (&self.geo, self.c);
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); w.len()];
        for o in 0..geo.out_len {
            let go = &g[o * c..(o + 1) * c];
            for j in 0..geo.k {
                let Some(i) = geo.source(o, j) else { continue };
                for ch in 0..c {
                    dw[j * c + ch] += go[ch] * x[i * c + ch];
                    dx[i * c + ch] += go[ch] * w[j * c + ch];
                }
            }
        }
        let mut out = vec![Some(dx), Some(dw)];
        if self.has_bias {
            out.push(Some(col_sums(g, geo.out_len, c)));
        }
        out
    }
}

fn seq_dims<T: Real>(g: &Graph<T>, op: &'static str, x: Var) -> Result<(usize, usize)> {
    match *g.shape(x) {
        [len, c] => Ok((len, c)),
        ref s => Err(shape_err(op, format!("input must be [len, channels], got {s:?}"))),
    }
}

impl<T: Real> Graph<T> {
    /// Dense convolution. `w` is `[k, c_in, c_out]`, `bias` is `[c_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (len, cin) = seq_dims(self, "conv1d", x)?;
        let (k, cout) = match *self.shape(w) {
            [k, ci, co] if ci == cin => (k, co),
            ref s => {
                return Err(shape_err(
                    "conv1d",
                    format!("weight {s:?} for {cin} input channels"),
                ))
            }
        };
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(shape_err("conv1d", "bias length != c_out"));
            }
        }
        let geo = Geometry::new("conv1d", len, k, stride, pad)?;
        let col = im2col(self.value(x).data(), cin, &geo);
        let mut out = gemm(&col, self.value(w).data(), geo.out_len, k * cin, cout);
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(b).for_each(|(o, &b)| *o += b);
            }
        }
        let out = Tensor::new([geo.out_len, cout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.record(
            out,
            &inputs,
            Box::new(Conv1d {
                geo,
                cin,
                cout,
                has_bias: bias.is_some(),
            }),
        )
    }

    /// Per-channel convolution. `w` is `[k, c]`, `bias` is `[c]`.
    pub fn depthwise_conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (len, c) = seq_dims(self, "depthwise_conv1d", x)?;
        let k = match *self.shape(w) {
            [k, wc] if wc == c => k,
            ref s => {
                return Err(shape_err(
                    "depthwise_conv1d",
                    format!("weight {s:?} for {c} channels"),
                ))
            }
        };
        if let Some(b) = bias {
            if self.value(b).numel() != c {
                return Err(shape_err("depthwise_conv1d", "bias length != channels"));
            }
        }
        let geo = Geometry::new("depthwise_conv1d", len, k, stride, pad)?;
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); geo.out_len * c];
        for o in 0..geo.out_len {
            let row = &mut out[o * c..(o + 1) * c];
            for j in 0..k {
                let Some(i) = geo.source(o, j) else { continue };
                for ch in 0..c {
                    row[ch] += wd[j * c + ch] * xd[i * c + ch];
                }
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(c) {
                row.iter_mut().zip(b).for_each(|(o, &b)| *o += b);
            }
        }
        let out = Tensor::new([geo.out_len, c], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.record(
            out,
            &inputs,
            Box::new(DepthwiseConv1d {
                geo,
                c,
                has_bias: bias.is_some(),
            }),
        )
    }
}
