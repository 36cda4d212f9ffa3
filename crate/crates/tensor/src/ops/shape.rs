use crate::error::{invalid, shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::{Real, Tensor};

struct Reshape;

impl<T: Real> Function<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

struct SliceCols {
    cols: usize,
    start: usize,
    width: usize,
}

impl<T: Real> Function<T> for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (r, gr) in g.chunks(self.width).enumerate() {
            let base = r * self.cols + self.start;
            dx[base..base + self.width].copy_from_slice(gr);
        }
        vec![Some(dx)]
    }
}

struct ConcatCols {
    widths: Vec<usize>,
}

impl<T: Real> Function<T> for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.widths.iter().sum();
        let rows = g.len() / total;
        let mut out: Vec<Vec<T>> = self
            .widths
            .iter()
            .map(|w| Vec::with_capacity(w * rows))
            .collect();
        for gr in g.chunks(total) {
            let mut off = 0;
            for (dst, &w) in out.iter_mut().zip(&self.widths) {
                dst.extend_from_slice(&gr[off..off + w]);
                off += w;
            }
        }
        out.into_iter().map(Some).collect()
    }
}

struct GatherRows {
    index: Vec<usize>,
}

impl<T: Real> Function<T> for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].cols();
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (gr, &i) in g.chunks(n).zip(&self.index) {
            for (d, &v) in dx[i * n..(i + 1) * n].iter_mut().zip(gr) {
                *d += v;
            }
        }
        vec![Some(dx)]
    }
}

struct MaskedFill {
    keep: Vec<bool>,
}

impl<T: Real> Function<T> for MaskedFill {
    fn name(&self) -> &'static str {
        "masked_fill"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = g.len() / self.keep.len();
        let mut dx = g.to_vec();
        for (row, &keep) in dx.chunks_mut(n).zip(&self.keep) {
            if !keep {
                row.fill(T::zero());
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.record(out, &[a], Box::new(Reshape))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if start >= end || end > cols {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{end} of {cols} columns"),
            ));
        }
        let width = end - start;
        let data = t
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let out = Tensor::new([rows, width], data)?;
        self.record(out, &[a], Box::new(SliceCols { cols, start, width }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(invalid("concat_cols", "no inputs"));
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new([rows, total], data)?;
        self.record(out, parts, Box::new(ConcatCols { widths }))
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        if index.is_empty() {
            return Err(invalid("gather_rows", "empty index"));
        }
        let data = index.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let out = Tensor::new([index.len(), t.cols()], data)?;
        self.record(
            out,
            &[a],
            Box::new(GatherRows {
                index: index.to_vec(),
            }),
        )
    }

    /// Replace every row whose `keep` flag is false by `value`.
    pub fn masked_fill(&mut self, a: Var, keep: &[bool], value: T) -> Result<Var> {
        let t = self.value(a);
        if keep.len() != t.rows() {
            return Err(shape_err(
                "masked_fill",
                format!("mask of {} for {} rows", keep.len(), t.rows()),
            ));
        }
        let n = t.cols();
        let mut data = t.data().to_vec();
        for (row, &k) in data.chunks_mut(n).zip(keep) {
            if !k {
                row.fill(value);
            }
        }
        let out = Tensor::new(t.shape(), data)?;
        self.record(
            out,
            &[a],
            Box::new(MaskedFill {
                keep: keep.to_vec(),
            }),
        )
    }
}
