use crate::error::Result;
use crate::graph::{Function, Graph, Var};
use crate::ops::kernels::col_sums;
use crate::tensor::{Real, Tensor};

struct Sum;
struct Mean;
struct Max {
    argmax: usize,
}
struct SumRows;

impl<T: Real> Function<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; inputs[0].numel()])]
    }
}

impl<T: Real> Function<T> for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].numel();
        vec![Some(vec![g[0] / T::of(n as f64); n])]
    }
}

impl<T: Real> Function<T> for Max {
    fn name(&self) -> &'static str {
        "max"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        dx[self.argmax] = g[0];
        vec![Some(dx)]
    }
}

impl<T: Real> Function<T> for SumRows {
    fn name(&self) -> &'static str {
        "sum_rows"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let m = inputs[0].rows();
        vec![Some(g.repeat(m))]
    }
}

impl<T: Real> Graph<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.record(Tensor::scalar(s), &[a], Box::new(Sum))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::of(t.numel() as f64);
        self.record(Tensor::scalar(m), &[a], Box::new(Mean))
    }

    /// Maximum element; the gradient flows to the first maximiser.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut argmax = 0;
        for (i, &v) in t.data().iter().enumerate() {
            if v > t.data()[argmax] {
                argmax = i;
            }
        }
        let m = t.data()[argmax];
        self.note_branches([argmax as u64]);
        self.record(Tensor::scalar(m), &[a], Box::new(Max { argmax }))
    }

    /// Sum over the leading axis: `[m,n] → [1,n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let out = Tensor::new([1, n], col_sums(t.data(), m, n))?;
        self.record(out, &[a], Box::new(SumRows))
    }
}
