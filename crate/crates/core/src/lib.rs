//! Retrieval-augmented agent modeling for ad hoc teamwork.
//!
//! A single learner adapts to unknown partners and opponents on iterated
//! matrix games. Partner policies are drawn from a diversity pool, partner
//! behaviour is recorded in an episodic memory keyed by viewpoint-aligned
//! embeddings, and a hypernetwork turns retrieved partner actions plus
//! positional codes into one layer of the learner's Q network.

pub mod checkpoint;
pub mod config;
pub mod dpp;
pub mod encoding;
mod error;
pub mod gradcheck;
pub mod hypernet;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod substrates;

pub use error::{MrdgError, Result};
