//! Schmidt tensor network states.
//!
//! A many-body state is held directly in Schmidt form across a bipartition:
//! two stacks of local orthogonal gates map binary Schmidt indices to the left
//! and right Schmidt states, and a matrix product state with nonnegative
//! entries carries the Schmidt coefficients.

pub mod contraction;
pub mod error;
pub mod lattice;
pub mod optimizer;
pub mod oracle;
pub mod sampler;
pub mod schmidt;
pub mod tensor;

pub use error::{Error, Result};
