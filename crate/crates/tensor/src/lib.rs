//! Dense row-major tensors generic over `f32`/`f64`, a reverse-mode tape
//! covering the operators the recognition model needs, a handful of
//! parameterised layers, Adam, and a finite-difference gradient checker.

mod backward;
mod error;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_params, GradCheck, FD_STEP};
pub use graph::{Graph, Mode};
pub use params::{BufferId, ParamGrads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
