pub mod bessel;
pub mod bench;
pub mod cie;
pub mod config;
pub mod error;
pub mod fft;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod mie;
pub mod net;
pub mod solver;
pub mod scene;
pub mod spectral;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
