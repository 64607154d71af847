//! Semi-supervised learning with fixed simplex anchors, graph-state
//! relational inference and reliability-weighted pseudo-labels.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkit`]: dense matrices and decompositions
//! - [`anchors`]: the fixed simplex equiangular anchor frame
//! - [`model`]: MLP backbone, projection and the two classification heads
//! - [`gri`]: relational embeddings, diffusion consensus, `L_con` and `L_sim`
//! - [`drp`]: EMA reliability statistics and the per-sample weights
//! - [`objective`]: the four-term loss and prediction
//! - [`data`]: synthetic imbalanced datasets and augmentations
//! - [`trainer`]: the training loop and metrics CSV
//! - [`metrics`]: evaluation diagnostics
//! - [`config`] and [`cli`]: run configuration files and the `sage` commands
//!
//! See `examples/` for one runnable program per capability.

pub mod anchors;
pub mod cli;
pub mod config;
pub mod data;
pub mod drp;
pub mod error;
pub mod gri;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod objective;
pub mod trainer;

pub use error::{Result, SageError};

/// 64-bit FNV-1a, used for stable fingerprints of parameters and anchors.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
