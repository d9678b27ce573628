//! Writes a three-phase (aggregate, mortar, pore) 32^3 raw byte volume next
//! to the `configs/concrete3d.toml` study and homogenizes a 16^3 subvolume.

use std::path::Path;

use voxhom::coarsening::build_uniform_mesh;
use voxhom::fem::BoundaryCondition;
use voxhom::homog::homogenize;
use voxhom::microstructure::{
    centered_origin, extract_subvolume, generate_synthetic, phase_fractions, save_raw_u8, PhaseId, PhaseTable,
    SyntheticSpec, VoxelGrid,
};

fn main() -> voxhom::Result<()> {
    let n = [32, 32, 32];
    let aggregate = generate_synthetic(&SyntheticSpec::Blobs { p: 0.45, correlation_length: 2.5, seed: 17 }, &n, 0.1)?;
    let pores = generate_synthetic(&SyntheticSpec::Random { p: 0.02, seed: 18 }, &n, 0.1)?;
    let grid = VoxelGrid::from_fn(&n, 0.1, |x, y, z| {
        if pores.at(x, y, z) == PhaseId(1) {
            PhaseId(2)
        } else if aggregate.at(x, y, z) == PhaseId(1) {
            PhaseId(0)
        } else {
            PhaseId(1)
        }
    })?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/specimen.raw");
    save_raw_u8(&grid, &path)?;
    println!("wrote {} with fractions {:?}", path.display(), phase_fractions(&grid).0);

    let table = PhaseTable::concrete();
    let sub = extract_subvolume(&grid, &centered_origin(&grid, 16), 16)?;
    let mesh = build_uniform_mesh(&sub, &table, 1)?;
    for bc in BoundaryCondition::ALL {
        let r = homogenize(&mesh, bc)?;
        println!("{:<4} C11 {:.1} C12 {:.1} C44 {:.1}", bc.label(), r.c.c(1, 1), r.c.c(1, 2), r.c.c(4, 4));
    }
    Ok(())
}
