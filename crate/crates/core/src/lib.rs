//! Selective representation misdirection for unlearning (SRMU) on a small
//! feed-forward network, with RMU and Adaptive RMU baselines.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, a seeded generator and a finite-difference
//!   gradient oracle.
//! - [`datagen`]: synthetic forget/retain corpora with tunable token overlap.
//! - [`model`]: the three-layer network and its pretraining.
//! - [`importance`]: the per-dimension importance map.
//! - [`misdirect`]: sign vectors, random directions and activation targets.
//! - [`unlearn`]: losses, AdamW and the target-layer unlearning loop.
//! - [`eval`]: accuracy/drift metrics, sweeps, Pareto fronts, comparisons.
//! - [`manifest`]: the JSON record written for every run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod eval;
pub mod importance;
pub mod manifest;
pub mod misdirect;
pub mod model;
pub mod numerics;
pub mod unlearn;

pub use error::{Error, Result};
