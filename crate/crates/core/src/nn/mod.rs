//! Dense neural-network engine: batched forward/backward for fixed MLP
//! topologies, Adam and SGD-with-momentum, linear learning-rate decay.
//!
//! Everything is `f64` and single threaded; a fixed seed gives a
//! bit-identical initialization and training trajectory.

mod matrix;
mod mlp;
mod optim;
mod schedule;

pub use matrix::Matrix;
pub use mlp::{
    mlp_backward, mlp_forward, mlp_predict, Activation, ForwardCache, LayerOffsets, MlpSpec,
    ParameterSet,
};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use schedule::LrSchedule;
