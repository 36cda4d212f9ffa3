//! Dense tensors and a tape-based reverse-mode differentiator, limited to
//! the operators a 1-D feature-pyramid transformer needs.
//!
//! A [`Graph`] records every primitive as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node sweeps the tape in reverse and
//! accumulates gradients on the leaves. Parameters live in a [`ParamStore`]
//! and are bound onto a fresh graph each step.
//!
//! ```
//! use tempseg_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod error;
pub mod fault;
mod gradcheck;
mod graph;
mod ops;
mod params;
mod tensor;

pub use error::{IoError, Result, TensorError};
pub use gradcheck::{gradcheck, GradcheckReport, DEFAULT_EPS};
pub use graph::{Function, Graph, Var};
pub use params::{decode_checkpoint, encode_checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::{Real, Tensor};
