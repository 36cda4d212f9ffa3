use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::ops::kernels::{gemm, gemm_nt, gemm_tn};
use crate::tensor::{Real, Tensor};

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> Function<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let (m, k, n) = (self.m, self.k, self.n);
        vec![Some(gemm_nt(g, b, m, n, k)), Some(gemm_tn(a, g, m, k, n))]
    }
}

struct Transpose {
    m: usize,
    n: usize,
}

impl<T: Real> Function<T> for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        // g is [n, m]
        vec![Some(transpose(g, self.n, self.m))]
    }
}

fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn dims2<T: Real>(g: &Graph<T>, op: &'static str, v: Var) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [m, n] => Ok((m, n)),
        ref s => Err(shape_err(op, format!("expected rank 2, got {s:?}"))),
    }
}

impl<T: Real> Graph<T> {
    /// `[m,k] · [k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self, "matmul", a)?;
        let (k2, n) = dims2(self, "matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] · [{k2},{n}]")));
        }
        let out = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new([m, n], out)?;
        self.record(out, &[a, b], Box::new(MatMul { m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self, "transpose", a)?;
        let out = Tensor::new([n, m], transpose(self.value(a).data(), m, n))?;
        self.record(out, &[a], Box::new(Transpose { m, n }))
    }
}
