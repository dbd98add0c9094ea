//! Blind structured-illumination reconstruction: forward simulation, pattern
//! estimation, covariance imaging (PE-SIMS), pixel reassignment (PE-SIMS-PR)
//! and resolution metrics.

pub mod error;
pub mod estimation;
pub mod fft;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod patterns;
pub mod phantoms;
pub mod reassignment;
pub mod sims;
pub mod simulate;

pub use error::{Error, Result};
pub use grid::{GridSpec, Image, OpticalConfig, Spectrum};
pub use optics::{Kernel, Kernels, Side};
pub use patterns::{ImageStack, PatternStack, Stack};
