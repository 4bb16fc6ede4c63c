//! Compact Gaussian-splat scenes: importance pruning, a neural appearance
//! field over per-Gaussian features, sub-vector quantization and an
//! xz-wrapped, entropy-coded container.

pub mod cameras;
pub mod codec;
pub mod error;
pub mod field;
pub mod image;
pub mod importance;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod ply;
pub mod raster;
pub mod svq;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use model::{Aabb, Camera, OmgGaussianSet, SourceGaussianSet};
