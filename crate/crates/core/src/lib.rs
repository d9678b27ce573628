//! Voxel-image computational homogenization of multiphase linear-elastic
//! microstructures.
//!
//! The crate covers the whole size / resolution / discretization (SRD)
//! workflow: voxel images and their phase tables ([`microstructure`]),
//! resolution and adaptive mesh coarsening ([`coarsening`]), the micro
//! boundary value problem under KUBC, PBC and SUBC ([`fem`]), homogenized
//! tensors and isotropy checks ([`homog`]), recovery-based error estimation
//! ([`errors`]) and a batch driver for parameter sweeps ([`cli`]).

pub mod cli;
pub mod coarsening;
pub mod error;
pub mod errors;
pub mod fem;
pub mod homog;
pub mod microstructure;
pub mod sparse;
pub mod vtk;

pub use error::{Error, Result};

/// Length unit of the size labels in case names (S256 = 256 × 0.1 mm).
pub const LENGTH_UNIT_MM: f64 = 0.1;
