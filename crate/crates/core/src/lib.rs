//! Desk-scale laboratory for caption-context procedure planning.
//!
//! Pipeline: generate a synthetic instructional-task world with exact
//! plan-distribution oracles ([`synthworld`]), train a stochastic
//! context-augmented generator against caption supervision ([`model`],
//! [`train`]), sample and decode plan distributions ([`infer`]), and score
//! them with the full probabilistic metric suite ([`metrics`]).

pub mod domain;
pub mod infer;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod seeds;
pub mod synthworld;
pub mod train;
