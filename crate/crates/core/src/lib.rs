//! Allocation-only building blocks for reinforcement-tuned selection of
//! machine-annotated stance and veracity labels.
//!
//! Everything here is deterministic given its inputs and an explicit RNG, and
//! needs nothing beyond `alloc`. File formats, network backends and the
//! training driver live in the `rumorsel` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod annotate;
pub mod checkpoint;
pub mod corpus;
pub mod labels;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod selection;
pub mod state;

pub use labels::{Distribution, StanceLabel, VeracityLabel};
