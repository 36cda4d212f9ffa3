//! LSTM primitives. Gate layout along the `4h` axis is `[input, forget, cell, output]`.

use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::ops::kernels::{col_sums, gemm, gemm_nt, gemm_tn, sigmoid};
use crate::tensor::{Real, Tensor};

/// Activated gates and new cell state for one step, from pre-activations `z`.
fn cell_forward<T: Real>(z: &mut [T], c_prev: &[T], c: &mut [T], h: &mut [T]) {
    let hd = c_prev.len();
    for j in 0..hd {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hd + j]);
        let g = z[2 * hd + j].tanh();
        let o = sigmoid(z[3 * hd + j]);
        z[j] = i;
        z[hd + j] = f;
        z[2 * hd + j] = g;
        z[3 * hd + j] = o;
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

/// Pre-activation gradients for one step. Returns `dc_prev`.
fn cell_backward<T: Real>(
    gates: &[T],
    c_prev: &[T],
    c: &[T],
    dh: &[T],
    dc_in: &[T],
    dz: &mut [T],
) -> Vec<T> {
    let hd = c.len();
    let mut dc_prev = vec![T::zero(); hd];
    for j in 0..hd {
        let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
        let tc = c[j].tanh();
        let dc = dc_in[j] + dh[j] * o * (T::one() - tc * tc);
        let d_o = dh[j] * tc;
        let di = dc * g;
        let dg = dc * i;
        let df = dc * c_prev[j];
        dc_prev[j] = dc * f;
        dz[j] = di * i * (T::one() - i);
        dz[hd + j] = df * f * (T::one() - f);
        dz[2 * hd + j] = dg * (T::one() - g * g);
        dz[3 * hd + j] = d_o * o * (T::one() - o);
    }
    dc_prev
}

struct LstmCell {
    din: usize,
    hd: usize,
}

impl<T: Real> Function<T> for LstmCell {
    fn name(&self) -> &'static str {
        "lstm_cell"
    }
    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (din, hd) = (self.din, self.hd);
        let (x, h, c_prev, w_ih, w_hh, b) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
        );
        let mut z = gemm(x, w_ih, 1, din, 4 * hd);
        let zh = gemm(h, w_hh, 1, hd, 4 * hd);
        for ((z, &a), &b) in z.iter_mut().zip(&zh).zip(b) {
            *z += a + b;
        }
        let mut c = vec![T::zero(); hd];
        let mut hn = vec![T::zero(); hd];
        cell_forward(&mut z, c_prev, &mut c, &mut hn);
        debug_assert!(out.data()[hd..] == c[..]);
        let mut dz = vec![T::zero(); 4 * hd];
        let dc_prev = cell_backward(&z, c_prev, &c, &g[..hd], &g[hd..], &mut dz);
        vec![
            Some(gemm_nt(&dz, w_ih, 1, 4 * hd, din)),
            Some(gemm_nt(&dz, w_hh, 1, 4 * hd, hd)),
            Some(dc_prev),
            Some(gemm_tn(x, &dz, 1, din, 4 * hd)),
            Some(gemm_tn(h, &dz, 1, hd, 4 * hd)),
            Some(dz),
        ]
    }
}

struct Lstm<T> {
    din: usize,
    hd: usize,
    /// Activated gates per step, `[len, 4h]`.
    gates: Vec<T>,
    /// Cell states per step, `[len, h]`.
    cells: Vec<T>,
}

impl<T: Real> Function<T> for Lstm<T> {
    fn name(&self) -> &'static str {
        "lstm"
    }
    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (din, hd) = (self.din, self.hd);
        let (x, w_ih, w_hh) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let hs = out.data();
        let len = hs.len() / hd;
        let zeros = vec![T::zero(); hd];
        let mut dz_all = vec![T::zero(); len * 4 * hd];
        let mut dh_next = vec![T::zero(); hd];
        let mut dc_next = vec![T::zero(); hd];
        let mut dw_hh = vec![T::zero(); hd * 4 * hd];
        for t in (0..len).rev() {
            let dh: Vec<T> = g[t * hd..(t + 1) * hd]
                .iter()
                .zip(&dh_next)
                .map(|(&a, &b)| a + b)
                .collect();
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &self.cells[(t - 1) * hd..t * hd]
            };
            let dz = &mut dz_all[t * 4 * hd..(t + 1) * 4 * hd];
            dc_next = cell_backward(
                &self.gates[t * 4 * hd..(t + 1) * 4 * hd],
                c_prev,
                &self.cells[t * hd..(t + 1) * hd],
                &dh,
                &dc_next,
                dz,
            );
            if t > 0 {
                let h_prev = &hs[(t - 1) * hd..t * hd];
                for (r, &hv) in h_prev.iter().enumerate() {
                    if hv == T::zero() {
                        continue;
                    }
                    for (d, &z) in dw_hh[r * 4 * hd..(r + 1) * 4 * hd].iter_mut().zip(dz.iter()) {
                        *d += hv * z;
                    }
                }
                dh_next = gemm_nt(dz, w_hh, 1, 4 * hd, hd);
            }
        }
        vec![
            Some(gemm_nt(&dz_all, w_ih, len, 4 * hd, din)),
            Some(gemm_tn(x, &dz_all, len, din, 4 * hd)),
            Some(dw_hh),
            Some(col_sums(&dz_all, len, 4 * hd)),
        ]
    }
}

impl<T: Real> Graph<T> {
    /// One LSTM step. `x` is `[1, d_in]`, `h`/`c` are `[1, h]`, `w_ih` is
    /// `[d_in, 4h]`, `w_hh` is `[h, 4h]`, `b` is `[4h]`.
    /// Returns `[1, 2h]` holding the new hidden state followed by the new cell.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var> {
        let din = self.value(x).numel();
        let hd = self.value(h).numel();
        check_lstm_weights(self, din, hd, w_ih, w_hh, b)?;
        if self.value(c).numel() != hd {
            return Err(shape_err("lstm_cell", "cell state size != hidden size"));
        }
        let mut z = gemm(self.value(x).data(), self.value(w_ih).data(), 1, din, 4 * hd);
        let zh = gemm(self.value(h).data(), self.value(w_hh).data(), 1, hd, 4 * hd);
        for ((z, &a), &b) in z.iter_mut().zip(&zh).zip(self.value(b).data()) {
            *z += a + b;
        }
        let mut cn = vec![T::zero(); hd];
        let mut hn = vec![T::zero(); hd];
        cell_forward(&mut z, self.value(c).data(), &mut cn, &mut hn);
        hn.extend(cn);
        let out = Tensor::new([1, 2 * hd], hn)?;
        self.record(out, &[x, h, c, w_ih, w_hh, b], Box::new(LstmCell { din, hd }))
    }

    /// Unidirectional LSTM over `x[len, d_in]` from zero initial state.
    /// Returns the hidden states `[len, h]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let (len, din) = match *self.shape(x) {
            [l, d] => (l, d),
            ref s => return Err(shape_err("lstm", format!("input {s:?}"))),
        };
        let hd = self.value(w_hh).shape()[0];
        check_lstm_weights(self, din, hd, w_ih, w_hh, b)?;
        let mut gates = gemm(self.value(x).data(), self.value(w_ih).data(), len, din, 4 * hd);
        let bias = self.value(b).data();
        for row in gates.chunks_mut(4 * hd) {
            row.iter_mut().zip(bias).for_each(|(z, &b)| *z += b);
        }
        let w_hh_data = self.value(w_hh).data();
        let mut cells = vec![T::zero(); len * hd];
        let mut hs = vec![T::zero(); len * hd];
        let zeros = vec![T::zero(); hd];
        for t in 0..len {
            let (h_before, h_rest) = hs.split_at_mut(t * hd);
            let (c_before, c_rest) = cells.split_at_mut(t * hd);
            let z = &mut gates[t * 4 * hd..(t + 1) * 4 * hd];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&h_before[(t - 1) * hd..], &c_before[(t - 1) * hd..])
            };
            for (r, &hv) in h_prev.iter().enumerate() {
                if hv == T::zero() {
                    continue;
                }
                for (zv, &w) in z.iter_mut().zip(&w_hh_data[r * 4 * hd..(r + 1) * 4 * hd]) {
                    *zv += hv * w;
                }
            }
            cell_forward(z, c_prev, &mut c_rest[..hd], &mut h_rest[..hd]);
        }
        let out = Tensor::new([len, hd], hs)?;
        self.record(
            out,
            &[x, w_ih, w_hh, b],
            Box::new(Lstm {
                din,
                hd,
                gates,
                cells,
            }),
        )
    }
}

fn check_lstm_weights<T: Real>(
    g: &Graph<T>,
    din: usize,
    hd: usize,
    w_ih: Var,
    w_hh: Var,
    b: Var,
) -> Result<()> {
    let ok = g.shape(w_ih) == [din, 4 * hd]
        && g.shape(w_hh) == [hd, 4 * hd]
        && g.value(b).numel() == 4 * hd;
    if !ok {
        return Err(shape_err(
            "lstm",
            format!(
                "w_ih {:?}, w_hh {:?}, b {:?} for d_in={din}, h={hd}",
                g.shape(w_ih),
                g.shape(w_hh),
                g.shape(b)
            ),
        ));
    }
    Ok(())
}
