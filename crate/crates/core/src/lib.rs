//! Attributed graph clustering by weighted cross-view contrastive learning.
//!
//! The pipeline smooths perturbed node attributes over the graph, encodes
//! them and the (iteratively refined) adjacency with two pairs of linear
//! encoders, and trains the encoders with an InfoNCE-style loss whose pair
//! weights come from K-means pseudo labels.
//!
//! ```
//! use ragc::graph::{generate_sbm, SbmParams};
//! use ragc::objective::{train, RunConfig};
//!
//! let graph = generate_sbm(&SbmParams { per_block: 10, ..SbmParams::default() }).unwrap();
//! let cfg = RunConfig { k: 3, epochs: 3, embed_dim: 16, ..RunConfig::default() };
//! let out = train(&graph, &cfg).unwrap();
//! assert_eq!(out.labels.len(), 30);
//! ```

pub mod config;
pub mod csada;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hca;
pub mod metrics;
pub mod objective;
pub mod tensor;

pub use error::{Error, Result};

/// Independent seed for a named sub-stream of a run (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D4_9BB1_3311_49EB);
    z ^ (z >> 31)
}
