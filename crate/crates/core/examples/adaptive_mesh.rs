//! Interface-preserving adaptive coarsening with hanging nodes, exported to
//! VTK.

use voxhom::coarsening::{adaptive_coarsen, build_uniform_mesh, count_ndof};
use voxhom::microstructure::{generate_synthetic, PhaseTable, SyntheticSpec};
use voxhom::vtk::{write_vtk, VtkFields};

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::SphereInclusion { radius: 20.0 }, &[64, 64], 0.1)?;
    let uniform = build_uniform_mesh(&grid, &table, 1)?;
    println!("uniform: {} elements, ndof {:?}", uniform.elements().len(), count_ndof(&uniform));
    for steps in 1..=3 {
        let (mesh, report) = adaptive_coarsen(&uniform, steps, false)?;
        println!(
            "{steps} steps: {} elements, max level {}, ndof {} (+{} deactivated), reduction factor {:.3}",
            mesh.elements().len(),
            mesh.max_level(),
            report.ndof_after,
            report.deactivated_ndof,
            report.reduction_factor
        );
        if steps == 3 {
            let path = std::env::temp_dir().join("voxhom-adaptive.vtk");
            write_vtk(&path, &mesh, &VtkFields::default())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
