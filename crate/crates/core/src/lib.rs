//! Training and evaluation of a single-stage grid detector on partially
//! labeled dense scenes, with constrained false-positive masking of the
//! classification loss.

pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
