//! Fuzzy Q-learning energy management for fuel-cell hybrid electric vehicles.
//!
//! The crate couples a deterministic powertrain simulator with a fuzzy
//! Q-learning agent that learns how to split the demanded power between the
//! fuel-cell stack and the battery.

// negated comparisons are how NaN parameters get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cycle;
pub mod env;
pub mod error;
pub mod fis;
pub mod fql;
pub mod powertrain;
pub mod trainer;

pub use error::{Error, Result};
