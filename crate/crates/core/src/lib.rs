//! Multi-task affective analysis heads: AU relation graph, expression head with
//! cross-attention, valence/arousal regression, their losses, metrics and training.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN on purpose

pub mod anfl;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod par;
pub mod training;

pub use error::{Error, Result};
