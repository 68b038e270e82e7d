//! Asymmetric dual-stream audio-visual speech recognition at desk scale.

pub mod ablation;
pub mod avrm;
pub mod cmnsm;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod seq;
pub mod synth;
pub mod tbsm;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

pub use adavsr_tensor::{Graph, Mode, ParamStore, Scalar, Tape, Tensor, Var};
pub use config::ExperimentConfig;
pub use model::{AdAvsr, ModelInput};

/// Element type used for training, checkpoints and evaluation.
pub type Real = f64;
pub type RealTensor = Tensor<Real>;
pub type RealStore = ParamStore<Real>;
pub type RealTape = Tape<Real>;
