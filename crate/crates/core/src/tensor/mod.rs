//! Dense 2-D tensors and a tape-based reverse-mode autodiff engine covering
//! exactly the operations the networks need.

mod chamfer;
pub mod gemm;
pub mod gradcheck;
mod graph;
mod optim;
#[allow(clippy::module_inception)]
mod tensor;

pub use chamfer::{chamfer_forward, ChamferMatch};
pub use gemm::{Dense, Real};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState, ParamSet, Parameter};
pub use tensor::Tensor;

/// Batchnorm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in a batchnorm update.
pub const BN_MOMENTUM: f64 = 0.9;
