//! Finite element solution of the micro boundary value problem.

pub mod assembly;
pub mod element;
pub mod solve;
pub mod tensor;

pub use assembly::{assemble, NodeExpansion, System};
pub use element::{element_stiffness, ElementGeometry, Kernel};
pub use solve::{
    element_energies, energy_norm, energy_norm_squared, field_energy_norm, hill_mandel_residual, qp_fields,
    solve_micro, volume_average, voigt_to_tensor, BcOperator, BoundaryCondition, HillMandel, LoadKind, MacroLoad,
    MicroSolution,
};
pub use tensor::{isotropic_compliance, lame, phase_stiffness, sym_eigenvalues, voigt_len, ElasticityTensor};
