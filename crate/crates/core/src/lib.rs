//! Limited-angle CT toolkit: scan simulation, missing-wedge analysis,
//! a redundant directional wavelet transform, and residual CNN restoration.

pub mod dwt;
pub mod error;
mod fft;
pub mod formats;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod spectrum;
pub mod tomo;

pub use error::{Error, Result};
pub use tomo::{Geometry, Image, Sinogram};
