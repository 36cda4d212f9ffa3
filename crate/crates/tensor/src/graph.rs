use crate::error::{Result, TensorError};
use crate::fault;
use crate::tensor::{Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward inputs, the forward output and the
/// upstream gradient (same length as `output`), and returns one optional
/// gradient per input. `None` means "no contribution".
pub trait Function<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    function: Option<Box<dyn Function<T>>>,
    requires_grad: bool,
    is_leaf: bool,
    grad: Option<Vec<T>>,
}

/// A tape of primitive operations.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// reverse topological order for [`Graph::backward`].
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
    branch_hash: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
            branch_hash: FNV_OFFSET,
        }
    }

    /// Reject non-finite forward values with an error naming the primitive.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node. Gradients are accumulated on leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            function: None,
            requires_grad,
            is_leaf: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Record an operation whose forward value was computed by the caller.
    ///
    /// This is how every primitive, and any operation defined outside this
    /// crate, enters the tape.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        function: Box<dyn Function<T>>,
    ) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite {
                op: function.name(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            function: requires_grad.then_some(function),
            requires_grad,
            is_leaf: false,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Fold branch decisions (ReLU signs, argmax picks, clamps) into a
    /// signature. Two evaluations with the same signature lie on the same
    /// smooth piece of the function, which gradient checking relies on.
    pub fn note_branches(&mut self, decisions: impl IntoIterator<Item = u64>) {
        for d in decisions {
            self.branch_hash = (self.branch_hash ^ d).wrapping_mul(FNV_PRIME);
        }
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients are summed
    /// into any gradient already present, so two calls without
    /// [`Graph::zero_grad`] accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.is_leaf {
                if node.requires_grad {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            let Some(function) = &node.function else { continue };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let mut contributions = function.backward(&inputs, &node.value, &g);
            if fault::is_flipped(function.name()) {
                for c in contributions.iter_mut().flatten() {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(contribution) = contribution else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(contribution.len(), self.nodes[input.0].value.numel());
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
