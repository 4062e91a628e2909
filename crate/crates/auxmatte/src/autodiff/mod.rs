//! Reverse-mode automatic differentiation, sized for this crate's network.
//!
//! Tensors live in an arena graph; ops append nodes whose parents always have
//! smaller indices, so the backward pass is a single reverse sweep that visits
//! each node exactly once. The element type is generic: `f32` for training,
//! `f64` for finite-difference verification.

mod checkpoint;
mod fdcheck;
mod graph;
mod loss;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry};
pub use fdcheck::{check_named_op, checked_op_names, FdReport, OpTolerance};
pub use graph::{Graph, Real, Shape, Tensor};
pub use loss::laplacian_loss;
pub use optim::Adam;
