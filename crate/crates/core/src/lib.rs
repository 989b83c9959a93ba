//! Sequential route recommendation for system-optimal static traffic assignment.
//!
//! Travelers arrive one at a time and a deep-Q agent recommends each a route so
//! that the resulting link flows minimise total system travel time. Classical
//! MSA and Frank-Wolfe solvers over the same networks provide the UE/SO
//! baselines the learned policies are scored against.

pub mod assignment;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod dqn;
pub mod env;
pub mod error;
pub mod network;
pub mod paths;
pub mod trainer;

pub use error::{Error, Result};
