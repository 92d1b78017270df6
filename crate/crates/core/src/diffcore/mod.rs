//! Minimal reverse-mode automatic differentiation: a define-by-run tape,
//! dense networks with concat-skip connectivity and dropout, and SGD/Adam.

mod network;
mod optim;
mod tape;
mod tensor;

pub use network::{Activation, Forward, LayerSpec, Mode, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
