//! Apparent stiffness of growing subvolumes under KUBC, PBC and SUBC,
//! relative to the largest periodic run.

use voxhom::fem::BoundaryCondition;
use voxhom::homog::{bc_comparison, SubvolumeOrigin};
use voxhom::microstructure::{generate_synthetic, PhaseTable, SyntheticSpec};

fn main() -> voxhom::Result<()> {
    let table = PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)])?;
    let grid = generate_synthetic(&SyntheticSpec::Blobs { p: 0.4, correlation_length: 2.0, seed: 11 }, &[64, 64], 0.1)?;
    let sizes = [8, 16, 32, 64];
    let cmp = bc_comparison(&grid, &table, &sizes, &BoundaryCondition::ALL, (BoundaryCondition::Pbc, 64), SubvolumeOrigin::Centered)?;
    let names: Vec<String> = cmp.components.iter().map(|(i, j)| format!("C{i}{j}")).collect();
    println!("size bc    deviation % ({})", names.join(", "));
    for row in &cmp.rows {
        let d: Vec<String> = row.deviation_percent.iter().map(|v| format!("{v:+7.2}")).collect();
        println!("{:>4} {:<5} {}", row.size, row.bc.label(), d.join(" "));
    }
    Ok(())
}
