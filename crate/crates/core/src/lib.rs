//! Simulation and reconstruction toolkit for integrate-and-fire time encoding
//! machines with device mismatch and in-line self-calibration.

// Negated comparisons below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod csvio;
pub mod encoder;
pub mod error;
pub mod feasibility;
pub mod harness;
pub mod numerics;
pub mod reconstruction;
pub mod signal;
pub mod special;

pub use error::{Result, TemError};
