//! Velocity estimation network over synchronized multi-device IMU windows.
//!
//! Each device's 6-channel window runs through its own convolutional
//! encoders; a quality-weighted fusion aggregates the shared-motion features
//! into a global velocity while attention across the device axis turns the
//! device-specific features into a local correction. Contrastive and
//! orthogonality terms keep the two feature roles apart during training.
//! Every stage is switchable through [`AblationConfig`] so reduced variants
//! train and evaluate with the same code path.

mod config;
mod network;

pub use config::{AblationConfig, LossWeights, ModelConfig};
pub use network::{
    batch_inputs, loss_gradcheck, FeatureBundle, ForwardNodes, FusionState, GlobalFusion,
    LocalAnalysis, LossParts, Network, LOSS_GRADCHECK_THRESHOLD,
};
