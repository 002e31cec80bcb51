//! Configural shape probes for patch-grid vision models.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithm of the
//! lab: the permutation algebra over grid cells, the permutation-symmetrized
//! anagram sampler, a small class-token patch transformer with radius masks
//! and a hand-written backward pass, the Configural Shape Score, the
//! representational-similarity probes and the statistics used to compare
//! shape metrics. File formats, PNG handling and the CLI live in
//! `anagram-lab`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod css;
pub mod image;
pub mod mask;
pub mod model;
pub mod patch;
pub mod pooled;
pub mod rng;
pub mod rsa;
pub mod sampler;
pub mod schedule;
pub mod stats;
pub mod toy;

pub use image::Image;
pub use patch::{AnagramPair, Permutation};
