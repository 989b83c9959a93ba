//! Checks shared by the property tests and the acceptance run. Each one
//! panics with a description on failure.
#![allow(dead_code)]

pub mod env;
pub mod learner;
pub mod paths;
pub mod solver;
