//! Halving the image resolution with the mixture rule and with the
//! majority rule.

use voxhom::coarsening::{coarsen_resolution_majority, coarsen_resolution_mixture};
use voxhom::microstructure::{generate_synthetic, phase_fractions, Material, PhaseTable, SyntheticSpec, VoxelGrid};

fn mean_young(grid: &VoxelGrid, table: &PhaseTable) -> f64 {
    grid.data().iter().map(|&p| table.effective(p).unwrap().0).sum::<f64>() / grid.len() as f64
}

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::Blobs { p: 0.5, correlation_length: 2.0, seed: 3 }, &[64, 64], 0.1)?;
    let original = phase_fractions(&grid);

    let (mut g, mut t) = (grid.clone(), table.clone());
    for _ in 0..2 {
        (g, t) = coarsen_resolution_mixture(&g, &t)?;
        let mixed = t.entries().iter().filter(|e| matches!(e.material, Material::Solid { .. })).count() - 2;
        println!(
            "mixture  {:?}: mean E {:.6} (original {:.6}), {mixed} mixed phases",
            g.extents(),
            mean_young(&g, &t),
            mean_young(&grid, &table)
        );
    }

    let mut g = grid.clone();
    for _ in 0..2 {
        g = coarsen_resolution_majority(&g, &original)?;
        println!("majority {:?}: fraction drift (L1) {:.2e}", g.extents(), phase_fractions(&g).l1_distance(&original));
    }
    Ok(())
}
