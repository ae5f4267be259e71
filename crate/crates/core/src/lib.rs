//! Modular policy networks: robot-specific and task-specific network modules
//! trained with tied weights over a grid of (robot, task) worlds, then
//! recombined to control robot/task pairs never trained together.

pub mod composition;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod trainer;
pub mod universe;

pub use error::{Error, Result};
