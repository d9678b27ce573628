//! Resolution coarsening (the R axis) and discretization: uniform
//! subdivision and interface-preserving adaptive coarsening (the D axis).

mod adaptive;
mod mesh;
mod resolution;

pub use adaptive::{adaptive_coarsen, CoarseningReport};
pub use mesh::{build_uniform_mesh, count_ndof, Element, HangingConstraint, Mesh};
pub use resolution::{coarsen_resolution_majority, coarsen_resolution_mixture};
