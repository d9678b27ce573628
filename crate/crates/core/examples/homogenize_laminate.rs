//! Homogenized stiffness of a two-phase laminate under the three boundary
//! conditions, between the Voigt and Reuss bounds.

use voxhom::coarsening::build_uniform_mesh;
use voxhom::fem::BoundaryCondition;
use voxhom::homog::{homogenize, voigt_reuss_bounds};
use voxhom::microstructure::{generate_synthetic, Axis, PhaseTable, SyntheticSpec};

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::Laminate { axis: Axis::X, fraction: 0.5, periods: 2 }, &[16, 16, 16], 0.1)?;
    let mesh = build_uniform_mesh(&grid, &table, 1)?;
    let (voigt, reuss) = voigt_reuss_bounds(&mesh)?;
    println!("Voigt C11 {:.1}  Reuss C11 {:.1}", voigt.c(1, 1), reuss.c(1, 1));
    for bc in BoundaryCondition::ALL {
        let r = homogenize(&mesh, bc)?;
        println!(
            "{:<4} C11 {:.1} C22 {:.1} C44 {:.1} C55 {:.1}  Hill-Mandel {:.1e}",
            bc.label(),
            r.c.c(1, 1),
            r.c.c(2, 2),
            r.c.c(4, 4),
            r.c.c(5, 5),
            r.hill_mandel
        );
    }
    Ok(())
}
