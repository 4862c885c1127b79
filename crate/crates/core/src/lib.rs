//! Persistent homology of Čech filtrations built on sparse random point
//! clouds, with Monte Carlo oracles for the limiting constants and a
//! statistical harness for the sparse-regime limit theorems.

pub mod cech;
pub mod cycles;
pub mod error;
pub mod format;
pub mod geometry;
pub mod gf2;
pub mod limits;
pub mod persistence;
pub mod regimes;
pub mod sampling;

pub use error::{Error, Result};
