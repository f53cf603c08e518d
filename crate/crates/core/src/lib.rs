//! Multi-agent answer aggregation through reasoning-trace deduplication.
//!
//! Agent slates are atomized into step sequences, merged into a reasoning
//! tree by embedding similarity, and resolved by adjudicating the points
//! where the tree diverges. The crate also mines preference triplets from
//! majority-failure cases, trains a toy linear preference model on the
//! resulting data, and checks correlated-voting variance claims by
//! simulation.

pub mod acpo;
pub mod atomize;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod judge;
pub mod packet;
pub mod pipeline;
pub mod remote;
pub mod sim;
pub mod slate;
pub mod traps;
pub mod tree;

pub use error::{Error, Result};
