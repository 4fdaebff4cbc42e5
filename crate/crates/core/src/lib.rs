//! Sample-efficient planning and Q-learning for MDPs whose transition kernel
//! factors through a small set of anchor state-action pairs.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons deliberately reject NaN

pub mod error;
pub mod harness;
pub mod linear;
pub mod mdp;
pub mod model_based;
pub mod model_file;
pub mod q_learning;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
