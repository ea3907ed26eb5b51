//! Patch-based learned normal filtering for triangle-mesh denoising.
//!
//! The pipeline: sample geodesic patches of facet normals from a noisy
//! mesh, run them through a residual filtering network to predict
//! noise-free normals, then update vertex positions to match. Training
//! pairs come from synthetic noise on clean meshes.

mod error;

pub mod dataset;
pub mod engine;
pub mod eval;
pub mod geodesic;
pub mod io;
pub mod mesh;
pub mod net;
pub mod noise;
pub mod patch;
pub mod pipeline;
pub mod shapes;
pub mod sparse;

pub use error::{Error, Result};
