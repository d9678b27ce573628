//! Recovery-based error estimate against the actual error from a refined
//! reference solution, on uniform and adaptively coarsened meshes.

use voxhom::coarsening::{adaptive_coarsen, build_uniform_mesh, count_ndof};
use voxhom::errors::error_report;
use voxhom::fem::{assemble, solve_micro, BoundaryCondition, MacroLoad};
use voxhom::microstructure::{generate_synthetic, PhaseTable, SyntheticSpec};

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::Blobs { p: 0.4, correlation_length: 3.0, seed: 5 }, &[32, 32], 0.1)?;
    let load = MacroLoad::strain(BoundaryCondition::Kubc, &[1e-3, 0.0, 0.0])?;

    let reference = build_uniform_mesh(&grid, &table, 4)?;
    let ref_sol = solve_micro(&assemble(&reference)?, &reference, &load)?;

    let uniform = build_uniform_mesh(&grid, &table, 1)?;
    for steps in 0..=2 {
        let (mesh, _) = adaptive_coarsen(&uniform, steps, false)?;
        let sol = solve_micro(&assemble(&mesh)?, &mesh, &load)?;
        let r = error_report(&mesh, &sol, Some((&reference, &ref_sol)))?;
        let worst = r.relative_estimated.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        println!(
            "adap{steps}: ndof {:>5}  e {:.4e}  e_bar {:.4e}  theta {:.3}  worst element {:.1}%",
            count_ndof(&mesh).0,
            r.e_mic.unwrap(),
            r.e_bar_mic,
            r.theta.unwrap(),
            worst
        );
    }
    Ok(())
}
