//! Dense tensors, reverse-mode differentiation, seeded randomness and Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{AttentionLayout, Graph, Var};
pub use params::{Gradients, ParamId, ParamSet};
pub use rng::{dropout_mask, Rng};
pub use tensor::{Scalar, Tensor};


#[cfg(test)]
mod op_tests;
