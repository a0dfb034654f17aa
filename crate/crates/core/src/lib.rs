//! Spiral MRI toolkit: trajectory design, NUFFT, multicoil simulation,
//! guided diffusion reconstruction, quality metrics and trajectory sweeps.

pub mod diffusion;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nufft;
pub mod phantom;
pub mod sweep;
pub mod trajgen;

pub use error::{Error, Result};
pub use image::{KSpaceMeasurements, MultiCoilImage, RealImage};
pub use num_complex::Complex64;
