use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::ops::kernels::{col_sums, pack_bits, sigmoid};
use crate::tensor::{Real, Tensor};

struct Add;
struct Sub;
struct Mul;
struct Scale<T>(T);
struct AddRow;
struct Sigmoid;
struct Relu;
struct Tanh;

impl<T: Real> Function<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

impl<T: Real> Function<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
    }
}

impl<T: Real> Function<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            Some(g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            Some(g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

impl<T: Real> Function<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.0).collect())]
    }
}

impl<T: Real> Function<T> for AddRow {
    fn name(&self) -> &'static str {
        "add_row"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[1].numel();
        let m = g.len() / n;
        vec![Some(g.to_vec()), Some(col_sums(g, m, n))]
    }
}

impl<T: Real> Function<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(y.data())
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect(),
        )]
    }
}

impl<T: Real> Function<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        // Subgradient 0 at exactly 0.
        vec![Some(
            g.iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
        )]
    }
}

impl<T: Real> Function<T> for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(y.data())
                .map(|(&g, &y)| g * (T::one() - y * y))
                .collect(),
        )]
    }
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

fn zip_map<T: Real>(g: &Graph<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let (ta, tb) = (g.value(a), g.value(b));
    let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(ta.shape(), data)
}

fn map<T: Real>(g: &Graph<T>, a: Var, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    let t = g.value(a);
    Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect())
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let out = zip_map(self, a, b, |x, y| x + y)?;
        self.record(out, &[a, b], Box::new(Add))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let out = zip_map(self, a, b, |x, y| x - y)?;
        self.record(out, &[a, b], Box::new(Sub))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let out = zip_map(self, a, b, |x, y| x * y)?;
        self.record(out, &[a, b], Box::new(Mul))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = map(self, a, |x| x * c)?;
        self.record(out, &[a], Box::new(Scale(c)))
    }

    /// `x[m,n] + b` with `b` holding `n` elements, broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(b).numel() != n {
            return Err(shape_err(
                "add_row",
                format!("row of {} for {:?}", self.value(b).numel(), self.shape(x)),
            ));
        }
        let bias = self.value(b).data();
        let tx = self.value(x);
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &b)| v + b))
            .collect();
        let out = Tensor::new(tx.shape(), data)?;
        self.record(out, &[x, b], Box::new(AddRow))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = map(self, a, sigmoid)?;
        self.record(out, &[a], Box::new(Sigmoid))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let pattern = pack_bits(self.value(a).data().iter().map(|&x| x > T::zero()));
        self.note_branches(pattern);
        let out = map(self, a, |x| if x > T::zero() { x } else { T::zero() })?;
        self.record(out, &[a], Box::new(Relu))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = map(self, a, |x| x.tanh())?;
        self.record(out, &[a], Box::new(Tanh))
    }
}
