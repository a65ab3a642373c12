//! Temporal grounding over a 2D moment map with dual joint-embedding
//! branches: an IoU-regression branch trained by BCE on scaled IoU targets
//! and a matching branch trained by a bidirectional pair-discrimination
//! loss over intra- and inter-video negatives.
//!
//! Everything in this crate is pure and deterministic given a seed: the
//! reverse-mode autodiff graph, the moment grid machinery, negative-set
//! construction, the losses, the trainer, the evaluation metrics, and the
//! synthetic corpus generator. File formats, the CLI, and anything that
//! touches the filesystem live in the companion `grounding-cli` crate.
//!
//! The crate is `no_std` + `alloc`; float transcendentals come from `libm`
//! via `num-traits`, which keeps forward/backward passes reproducible.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod losses;
pub mod momentmap;
pub mod negatives;
pub mod real;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
