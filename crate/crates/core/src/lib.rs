//! Three-dimensional drift-diffusion simulation of semiconductor devices on
//! tetrahedral meshes.
//!
//! Poisson is discretized with linear finite elements and the continuity
//! equations with the edge-averaged (exponentially fitted) scheme, coupled
//! by a Gummel iteration. Current densities are reconstructed per element
//! with one of three methods ([`jrecon::ReconstructionMethod`]); the
//! reconstruction also drives the impact-ionization generation.
//!
//! The [`cli`] module is the `ddfem` binary; [`config`] reads run files.

pub mod cli;
pub mod config;
pub mod discretization;
pub mod error;
pub mod gummel;
pub mod jrecon;
pub mod mesh;
pub mod output;
pub mod physics;
pub mod vtk;

pub use error::{Error, Result};
