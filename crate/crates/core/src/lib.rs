//! Byzantine-robust clustered federated learning simulator.
//!
//! A run goes through three stages: every machine fits a local model on its
//! own shard ([`localsolve`]), the server clusters those models
//! ([`clustering`]), and each cluster is then trained with a robust
//! distributed optimizer ([`distopt`]). [`pipeline`] wires the stages together
//! over synthetic ([`datagen::generate_fleet`]) or ingested fleets.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod datagen;
pub mod distopt;
pub mod error;
pub mod graph;
pub mod localsolve;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod report;
pub mod robust_stats;

pub use error::{Error, Result, Stage};
pub use numerics::{Matrix, ModelVector};
