//! Human-like car-following modeling.
//!
//! A kinematic car-following environment, a DDPG agent trained to reproduce
//! recorded driving, IDM / Loess / feed-forward / recurrent baselines, and the
//! calibration and intra-/inter-driver validation protocol used to compare
//! them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod ddpg;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod kinematics;
pub mod model_file;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
