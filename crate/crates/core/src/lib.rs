//! Simulator for federated semi-supervised learning in which a few clients
//! hold labeled data and the rest hold unlabeled data.
//!
//! Clients train a shared MLP with a supervised or pseudo-label consistency
//! loss plus two class-aware contrastive terms: one over the views in the
//! local batch and one against server-maintained class prototypes. The
//! server weights local models and local prototypes by how many samples
//! each client *authenticates* (classifies correctly, or labels with high
//! confidence).
//!
//! Everything is deterministic given the run seed, independent of the
//! number of worker threads.

#![allow(clippy::needless_range_loop)]

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod plot;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
