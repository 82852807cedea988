//! Layered per-pixel 3D Gaussian scene representation and tooling.
//!
//! The crate provides the full pipeline around the representation: camera
//! geometry, spherical-harmonic colour, a deterministic tile-based splatting
//! renderer with an analytic backward pass, depth-anchored layered scene
//! construction, photometric fitting, robust scale alignment, and the
//! evaluation metrics used for novel-view-synthesis experiments.

pub mod align;
pub mod baseline;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod grad;
pub mod image;
pub mod io;
pub mod layered;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod sh;
pub mod synthetic;

pub use error::{Error, Result};
