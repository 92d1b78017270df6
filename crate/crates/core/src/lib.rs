//! Model-based action exploration on a CACLA actor-critic, with a small
//! reverse-mode autodiff engine and an N-dimensional particle environment.

pub mod cli;
pub mod diffcore;
pub mod dyna;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod mbae;
pub mod policy;
pub mod schedule;
pub mod trainer;
pub mod valuefn;

pub use error::{Error, Result};
