//! Minimal reverse-mode autodiff over `f64` matrices: the tape, the ops the
//! network needs, a few parameterized layers and an Adam optimizer.

mod attention;
mod conv;
mod gemm;
mod graph;
mod layers;
mod norm;
mod ops;
mod optim;
mod params;
mod tensor;

pub use conv::ConvSpec;
pub use gemm::{gemm, MatRef};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv1d, ConvTranspose1d, GroupNorm, Linear, PRelu};
pub use norm::GROUP_NORM_EPS;
pub use ops::sigmoid;
pub use optim::{clip_global_norm, global_norm, Adam};
pub use params::{Init, Param, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::BackwardFn;

#[cfg(test)]
mod gradcheck;
