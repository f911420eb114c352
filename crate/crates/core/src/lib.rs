#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod engine;
pub mod error;
pub mod field;
pub mod fluctuation;
pub mod green;
pub mod harmonic;
pub mod lattice;
pub mod martingale;
pub mod rng;
pub mod sandpile;
pub mod snapshot;
pub mod stats;
pub mod sweep;
pub mod walk;
