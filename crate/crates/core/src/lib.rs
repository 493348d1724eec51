//! Visual predictive control for image-based visual servoing, accelerated by a
//! memory of motion.
//!
//! The crate simulates a free-flying pinhole camera ([`camera`]), formulates
//! the receding-horizon servoing problem ([`model`]) and solves it with a
//! warm-startable SQP method ([`solver`]). Off-line, [`memory`] rolls the
//! controller from many random starts and stores successful trajectories;
//! on-line, [`regress`] queries that memory by k-NN or Gaussian-process
//! regression for a warm start and an intermediate way point whenever the
//! features approach an occlusion ([`controller`]). [`bench`] runs seeded
//! strategy comparisons.

pub mod bench;
pub mod camera;
pub mod controller;
pub mod error;
pub mod memory;
pub mod model;
pub mod regress;
pub mod scenario;
pub mod solver;

pub use error::{Result, VpcError};
