//! Hypothesis-and-test grasp detection for parallel-jaw grippers.
//!
//! The pipeline generates 7-DoF grasp candidates geometrically from a partial
//! point cloud, turns each candidate into a small inside/outside graph in the
//! gripper frame, and scores the graphs with an ensemble of graph neural
//! networks. An analytic force-closure oracle on synthetic primitive scenes
//! provides training labels and benchmark ground truth.

pub mod candidates;
pub mod cloud;
pub mod config;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod gripper;
pub mod oracle;
pub mod pipeline;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

/// Derives a child seed from a parent seed and a stream index (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
