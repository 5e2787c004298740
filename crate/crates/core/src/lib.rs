//! Simulation, exact computation and verification tools for two-color
//! nonlinear unbalanced urns and the stochastic approximation recursions
//! that describe them.

// `!(x > 0.0)` style checks reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod drift;
pub mod error;
pub mod exact;
pub mod ldp;
pub mod model;
pub mod rng;
pub mod sa;
pub mod stats;

pub use error::{Result, UrnError};
