//! Multi-device wearable inertial localization.
//!
//! A person carries several consumer wearables (phone, watch, earbuds), each
//! streaming 6-axis IMU data. This crate estimates the wearer's horizontal
//! velocity per time window from all devices jointly and integrates it into a
//! walking trajectory. The model separates device-shared *global* motion from
//! device-specific *local* motion with contrastive and orthogonality
//! objectives, fuses global features with per-device reliability weights, and
//! refines the estimate from local features through cross-device attention.
//!
//! Everything runs on a hand-rolled double-precision tape autodiff core
//! ([`diffnet`]), so the whole pipeline is verifiable on a desktop CPU:
//!
//! * [`diffnet`]   - tensors, reverse-mode gradients, NN layers, Adam
//! * [`dataio`]    - CSV ingest, time sync, resampling, windowing, labels
//! * [`synthgen`]  - synthetic body-network walking sequences
//! * [`model`]     - encoders, losses, fusion heads, ablation variants
//! * [`trainer`]   - deterministic seeded training and checkpointing
//! * [`evaluator`] - trajectory integration, ATE/RTE/CDF, PDR baseline
//!
//! Entry points are the `bodynet` binary (`simulate`, `train`, `eval`,
//! `ablate`, `gradcheck`) and the runnable examples in `examples/`.

pub mod cli;
pub mod dataio;
pub mod diffnet;
pub mod evaluator;
pub mod model;
pub mod synthgen;
pub mod trainer;

pub use diffnet::{ParameterSet, Tensor};
