//! Dense tensors, reverse-mode differentiation, optimizers and gradient
//! verification.

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, Precision, ScalarFn};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{adam_step, polyak_update, AdamState};
pub use params::{Bound, ParameterSet};
pub use real::Real;
pub use tensor::{numel, Tensor};
