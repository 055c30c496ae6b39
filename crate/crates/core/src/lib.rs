//! Deep equilibrium algorithmic reasoning.
//!
//! A graph neural network processor is iterated to a fixed point
//! `H* = P(H*, U, E)` with a black-box root finder instead of being unrolled
//! for a known number of algorithm steps. Gradients flow through the fixed
//! point by implicit differentiation.

pub mod autodiff;
pub mod dear;
pub mod error;
pub mod expander;
pub mod fixpoint;
pub mod harness;
pub mod model;
pub mod tasks;

pub use error::{Error, Result};
