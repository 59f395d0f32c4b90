//! Desk-scale category-level adversarial domain adaptation for semantic
//! segmentation, built on a small reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
