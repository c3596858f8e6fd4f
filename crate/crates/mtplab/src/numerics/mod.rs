//! Deterministic CPU numerics: tensors, seeded RNG, the kernel layer, a
//! reverse-mode autodiff graph, and a finite-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] so the same graph code trains in
//! `f32` and gradient-checks in `f64`. Reductions fix their accumulation
//! order per output element, which is what makes the parallel kernel path
//! bitwise-identical to the sequential one.

mod gradcheck;
mod graph;
pub mod kernels;
mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
