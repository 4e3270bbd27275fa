//! Dual-antenna GPS multipath detection toolkit.
//!
//! The pipeline runs from ray-traced urban-canyon simulation ([`scenesim`])
//! through RINEX files ([`rinex`]) and broadcast orbits ([`orbits`]) to the
//! five-feature table ([`features`]), then classifier training ([`ml`]) and
//! accuracy reporting ([`eval`]).

// `!(x > y)` comparisons reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gnss;
pub mod orbits;
pub mod rinex;
pub mod features;
pub mod scenesim;
pub mod ml;
pub mod eval;
