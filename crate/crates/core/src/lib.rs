//! Facial motion prior networks.
//!
//! Per-expression motion masks are built from aligned neutral/expressive
//! face pairs and used to supervise a mask generator whose output is fused
//! with the input face before classification.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod maskgen;
pub mod networks;
pub mod nn;
mod par;
pub mod training;
pub mod seed;
pub mod raster;
pub mod synth;

pub use error::{FmpnError, Result};
