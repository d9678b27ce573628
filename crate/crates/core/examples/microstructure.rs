//! Synthetic microstructures, phase fractions, subvolumes, slices and the
//! raw byte format.

use voxhom::microstructure::{
    extract_slice, extract_subvolume, generate_synthetic, load_voxel_grid, phase_fractions, save_raw_u8, Axis,
    PhaseTable, SyntheticSpec, VoxelFormat,
};

fn main() -> voxhom::Result<()> {
    let specs = [
        SyntheticSpec::Laminate { axis: Axis::X, fraction: 0.5, periods: 2 },
        SyntheticSpec::SphereInclusion { radius: 6.0 },
        SyntheticSpec::Checkerboard { cell: 4 },
        SyntheticSpec::Random { p: 0.3, seed: 7 },
        SyntheticSpec::Blobs { p: 0.4, correlation_length: 2.5, seed: 7 },
    ];
    for spec in &specs {
        let g = generate_synthetic(spec, &[32, 32, 32], 0.1)?;
        let f = phase_fractions(&g);
        println!("{:<40} phase 1 fraction {:.4}", g.provenance, f.get(voxhom::microstructure::PhaseId(1)));
    }

    let grid = generate_synthetic(&SyntheticSpec::Blobs { p: 0.4, correlation_length: 2.5, seed: 7 }, &[32, 32, 32], 0.1)?;
    let sub = extract_subvolume(&grid, &[8, 8, 8], 16)?;
    let slice = extract_slice(&grid, Axis::Z, 16)?;
    println!("subvolume {:?} ({}), slice {:?}", sub.extents(), sub.provenance, slice.extents());

    let dir = std::env::temp_dir().join("voxhom-microstructure");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("blobs.raw");
    save_raw_u8(&grid, &path)?;
    let table = PhaseTable::concrete();
    let back = load_voxel_grid(&path, VoxelFormat::RawU8, &[32, 32, 32], 0.1, &table)?;
    assert_eq!(back.data(), grid.data());
    println!("round trip through {} ok", path.display());
    Ok(())
}
