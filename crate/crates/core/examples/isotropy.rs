//! Isotropy identification of homogenized tensors: a random 2d medium and
//! an exact isotropic tensor.

use voxhom::fem::{phase_stiffness, BoundaryCondition};
use voxhom::homog::{homogenize_grid, identify_isotropy};
use voxhom::microstructure::{generate_synthetic, PhaseTable, SyntheticSpec};

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 2 }, &[48, 48], 0.1)?;
    let r = homogenize_grid(&grid, &table, BoundaryCondition::Pbc)?;
    let report = identify_isotropy(&r.c)?;
    println!("random medium: E {:.1} MPa, nu {:.4}, G {:.1} MPa", report.young, report.poisson, report.shear);
    for d in &report.deviations {
        println!("  {:<12} {:.3}%", d.name, 100.0 * d.value);
    }

    let exact = phase_stiffness(3, 32_374.7, 0.29)?;
    let report = identify_isotropy(&exact)?;
    println!("exact 3d: E {:.1}, nu {:.3}, max deviation {:.1e}", report.young, report.poisson, report.max_deviation());
    Ok(())
}
