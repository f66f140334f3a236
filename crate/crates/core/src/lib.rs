//! Adaptive anatomical contrastive learning for long-tailed semi-supervised
//! segmentation, at desk scale.
//!
//! The crate covers offline class-center computation on the unit sphere,
//! adaptive center allocation, contrastive and segmentation losses with
//! hand-derived gradients, temperature schedules, a small encoder-decoder
//! with student/teacher heads, a synthetic long-tailed dataset, evaluation
//! metrics and the two-stage training pipeline.

pub mod centers;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
