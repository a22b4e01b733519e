//! Partial-annotation training for volumetric segmentation.
//!
//! A structure is annotated on a short run of consecutive slices chosen
//! around a random slice inside its extent; the slices above and below the
//! extent count as annotated background. Training uses only blocks that
//! contain annotated slices, feeds the annotated-slice mask to the network
//! as a second channel and optimizes a batch Dice loss restricted to the
//! annotated voxels. Optimization runs in two phases: plateau learning-rate
//! reduction to a best-validation checkpoint, then fine-tuning from that
//! checkpoint with periodic warm restarts.
//!
//! Everything runs on synthetic ellipsoid phantoms so full and partial
//! annotation regimes can be compared at equal annotation effort.

pub mod annotation;
pub mod cli;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod phantom;
pub mod postproc;
pub mod sampling;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
