//! The closed operator set. Each primitive is a `Graph` method that computes
//! its forward value eagerly and records a backward rule.

mod attention;
mod conv;
mod elementwise;
pub(crate) mod kernels;
mod linalg;
mod lstm;
mod norm;
mod reduce;
mod shape;
