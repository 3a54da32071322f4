//! Structural design pipeline: density-based topology optimization, smooth
//! level-set extraction, and embedded-boundary shape optimization.

pub mod error;
pub mod export;
pub mod fcm;
pub mod fem;
pub mod history;
pub mod levelset;
pub mod mma;
pub mod pipeline;
pub mod shape_opt;
pub mod simp;

pub use error::{Error, Result};
