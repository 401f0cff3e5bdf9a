//! Directed polymers in random environments under an external field.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Coordinate loops read more plainly with an index in this crate.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod criteria;
pub mod disorder;
pub mod engine;
pub mod experiments;
pub mod free_energy;
pub mod kernels;
pub mod run;
pub mod stats;
