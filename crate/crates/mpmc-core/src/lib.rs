//! Core algorithms for a desk-scale semi-supervised semantic segmentation lab
//! built around a multi-scale patch-based multi-label classifier (MPMC) head.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! procedural scene synthesis, weak/strong view construction, a toy
//! encoder-decoder segmentor with hand-written backprop, receptive-field
//! geometry, patch-level multi-label targets, the MPMC head with its
//! asymmetric focal loss, confidence-derived weight maps for the
//! unsupervised losses, evaluation metrics, and a single deterministic
//! training step. File formats, checkpoints and the CLI live in the
//! companion `mpmc-lab` crate.
//!
//! The crate is `no_std` compatible (with `alloc`); enable the default
//! `std` feature for std error integration.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod ema;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod mpmc;
pub mod nn;
pub mod patches;
pub mod pseudo;
pub mod rf;
pub mod rng;
pub mod segmodel;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use grid::{ImageGrid, LabelGrid, IGNORE};
