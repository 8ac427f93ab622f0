//! Metamorphic runtime monitoring for image-driven lane-keeping controllers.

pub mod baselines;
pub mod cli;
pub mod control;
pub mod corrupt;
pub mod eval;
pub mod imgops;
pub mod monitor;
pub mod mutate;
pub mod nn;
pub mod sim;
pub mod util;

pub use control::{ControlOutput, Controller};
