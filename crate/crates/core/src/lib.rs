//! Skeleton-aware diffusion pose prior.
//!
//! The crate learns a distribution over articulated body poses (24 joint
//! rotations in continuous 6D form) with a transformer denoiser whose
//! attention is biased by skeletal distance, and uses the trained model as a
//! prior for generation, keypoint-guided refinement, optimization fitting,
//! completion from partial 3D joints and pose denoising.

pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod numcore;
pub mod params;
pub mod rotations;
pub mod skeleton;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use numcore::{RngStream, Tape, Tensor, Var};
