//! Waves on discrete closed manifolds and recovery of their distance
//! geometry from the restricted source-to-solution map.
//!
//! Layout follows the data flow:
//! [`manifold`] builds the discrete geometry, [`spectral`] diagonalizes it,
//! [`wave`] synthesizes fields and the measurement archive, [`bcdata`] holds
//! everything computable from the archive alone, and [`recon`] turns
//! data-side verdicts into distances.

pub mod bcdata;
pub mod config;
pub mod error;
pub mod hash;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod pipeline;
pub mod recon;
pub mod spectral;
pub mod wave;

pub use error::{Error, Result};
