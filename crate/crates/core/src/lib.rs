//! Numerical core for the stochastic compressible Navier–Stokes relative
//! energy laboratory.
//!
//! Everything in this crate is pure computation over owned buffers and runs
//! without `std` (an allocator is required). File formats, threading and the
//! command line live in the `relent` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cns;
pub mod coupling;
pub mod diagnostics;
mod error;
pub mod euler;
pub mod fft;
pub mod grid;
pub mod math;
pub mod noise;
pub mod snapshot;
pub mod spectral;
mod state;
pub mod stats;
pub mod thermo;

pub use error::{Error, Result};
pub use state::State;
