use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::{Real, Tensor};

struct LayerNorm<T> {
    eps: T,
}

fn normalize_row<T: Real>(row: &[T], eps: T) -> (Vec<T>, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + eps).sqrt();
    (row.iter().map(|&v| (v - mean) * rstd).collect(), rstd)
}

impl<T: Real> Function<T> for LayerNorm<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, gamma) = (inputs[0], inputs[1].data());
        let n = x.cols();
        let nf = T::of(n as f64);
        let mut dx = Vec::with_capacity(x.numel());
        let mut dgamma = vec![T::zero(); n];
        let mut dbeta = vec![T::zero(); n];
        for (row, gr) in x.data().chunks(n).zip(g.chunks(n)) {
            let (xhat, rstd) = normalize_row(row, self.eps);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            let dxhat: Vec<T> = gr.iter().zip(gamma).map(|(&g, &w)| g * w).collect();
            for j in 0..n {
                dgamma[j] += gr[j] * xhat[j];
                dbeta[j] += gr[j];
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xhat[j];
            }
            for j in 0..n {
                dx.push(rstd / nf * (nf * dxhat[j] - sum_d - xhat[j] * sum_dx));
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

struct Softmax;

impl<T: Real> Function<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = y.cols();
        let mut dx = Vec::with_capacity(g.len());
        for (yr, gr) in y.data().chunks(n).zip(g.chunks(n)) {
            let s: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
            dx.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - s)));
        }
        vec![Some(dx)]
    }
}

impl<T: Real> Graph<T> {
    /// Normalise each row over the trailing axis, then `· gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(shape_err("layer_norm", "gamma/beta length != features"));
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let xt = self.value(x);
        let mut out = Vec::with_capacity(xt.numel());
        for row in xt.data().chunks(n) {
            let (xhat, _) = normalize_row(row, eps);
            out.extend(xhat.iter().zip(gd).zip(bd).map(|((&h, &g), &b)| h * g + b));
        }
        let out = Tensor::new(xt.shape(), out)?;
        self.record(out, &[x, gamma, beta], Box::new(LayerNorm { eps }))
    }

    /// Row-wise softmax of `x + mask`. `mask` is additive (`0` or `-inf`).
    /// A row whose every logit is `-inf` yields all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&[T]>) -> Result<Var> {
        let xt = self.value(x);
        if let Some(m) = mask {
            if m.len() != xt.numel() {
                return Err(shape_err("softmax", "mask size != logits size"));
            }
        }
        let n = xt.cols();
        let mut out = Vec::with_capacity(xt.numel());
        for (r, row) in xt.data().chunks(n).enumerate() {
            let logits: Vec<T> = match mask {
                Some(m) => row.iter().zip(&m[r * n..(r + 1) * n]).map(|(&a, &b)| a + b).collect(),
                None => row.to_vec(),
            };
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                out.extend(std::iter::repeat_n(T::zero(), n));
                continue;
            }
            let e: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
            let s: T = e.iter().copied().sum();
            out.extend(e.iter().map(|&v| v / s));
        }
        let out = Tensor::new(xt.shape(), out)?;
        self.record(out, &[x], Box::new(Softmax))
    }
}
