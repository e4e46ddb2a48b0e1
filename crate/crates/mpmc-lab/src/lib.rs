//! Experiment orchestration around `mpmc-core`: dataset persistence,
//! config files, the training loop, ablation presets, evaluation exports
//! and chart emission.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod features;
pub mod plots;
pub mod trainer;
