//! Stiffness inference from demonstrations and complementary robot stiffness
//! labels, with the SPD geometry, simulated contact worlds, learned policy
//! and impedance runtime that surround them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cholesky;
pub mod error;
pub mod inference;
pub mod labels;
pub mod pipeline;
pub mod policy;
pub mod records;
pub mod runtime;
pub mod sim;
pub mod spd;
pub mod stats;

pub use error::{Error, Result};
