//! Dense tensors, a reverse-mode tape, AdamW and the checkpoint format.
//!
//! Precision is chosen by the tape's element type: `Tape<f64>` for gradient
//! checks and oracles, `Tape<f32>` for training.

pub mod checkpoint;
pub mod flops;
pub mod gradcheck;
pub mod linalg;
mod ops;
pub mod optim;
pub mod params;
mod tape;
mod tensor;

pub use optim::{AdamW, AdamWConfig, StepOutcome};
pub use params::{Graph, ParamId, ParamStore};
pub(crate) use tape::{sigmoid as tape_sigmoid, softplus as tape_softplus};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{Precision, Real, Tensor};
