//! Uniform resolution coarsening: every 2^d block of voxels becomes one voxel.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::microstructure::{Axis, PhaseFractions, PhaseId, PhaseTable, VoxelGrid};

fn halved_extents(grid: &VoxelGrid) -> Result<Vec<usize>> {
    grid.extents()
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            if n % 2 == 1 {
                Err(Error::OddExtent {
                    axis: Axis::from_index(a),
                    extent: n,
                })
            } else {
                Ok(n / 2)
            }
        })
        .collect()
}

fn children(grid: &VoxelGrid, x: usize, y: usize, z: usize) -> Vec<PhaseId> {
    let zr = if grid.dim() == 3 { 2 } else { 1 };
    let mut out = Vec::with_capacity(8);
    for dz in 0..zr {
        for dy in 0..2 {
            for dx in 0..2 {
                out.push(grid.at(2 * x + dx, 2 * y + dy, zr * z + dz));
            }
        }
    }
    out
}

/// Rule of mixtures: each coarse voxel gets the arithmetic mean of its
/// children's effective E and ν. Blocks that mix phases are mapped to new
/// solid phases appended to the returned table (one per distinct mixture).
pub fn coarsen_resolution_mixture(grid: &VoxelGrid, table: &PhaseTable) -> Result<(VoxelGrid, PhaseTable)> {
    grid.validate_phases(table)?;
    let ext = halved_extents(grid)?;
    let mut out_table = table.clone();
    let mut mixed: BTreeMap<(u64, u64), PhaseId> = BTreeMap::new();
    let mut failure = None;
    let coarse = VoxelGrid::from_fn(&ext, grid.spacing() * 2.0, |x, y, z| {
        let ch = children(grid, x, y, z);
        if ch.iter().all(|&p| p == ch[0]) {
            return ch[0];
        }
        let mut props: Vec<(f64, f64)> = Vec::with_capacity(ch.len());
        for &p in &ch {
            match table.effective(p) {
                Ok(v) => props.push(v),
                Err(e) => {
                    failure.get_or_insert(e);
                    return ch[0];
                }
            }
        }
        // sorted summation so equal compositions give bit-identical means
        props.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let n = props.len() as f64;
        let young = props.iter().map(|p| p.0).sum::<f64>() / n;
        let poisson = props.iter().map(|p| p.1).sum::<f64>() / n;
        *mixed
            .entry((young.to_bits(), poisson.to_bits()))
            .or_insert_with(|| out_table.push_solid(young, poisson))
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((coarse.with_provenance(format!("{}:mix", grid.provenance)), out_table))
}

/// "The majority wins": each coarse voxel takes its modal child phase. Ties
/// are resolved in raster order after all clear majorities are placed,
/// picking the tied phase whose choice brings the global fractions of the
/// coarse grid closest (L1) to `original`; remaining ties go to the lowest id.
pub fn coarsen_resolution_majority(grid: &VoxelGrid, original: &PhaseFractions) -> Result<VoxelGrid> {
    let ext = halved_extents(grid)?;
    let mut data = Vec::with_capacity(ext.iter().product());
    let mut ties: Vec<(usize, Vec<PhaseId>)> = Vec::new();
    let mut counts: BTreeMap<PhaseId, usize> = BTreeMap::new();
    let mut assigned = 0usize;

    let mut e3 = [1; 3];
    e3[..ext.len()].copy_from_slice(&ext);
    for z in 0..e3[2] {
        for y in 0..e3[1] {
            for x in 0..e3[0] {
                let mut tally: BTreeMap<PhaseId, usize> = BTreeMap::new();
                for p in children(grid, x, y, z) {
                    *tally.entry(p).or_default() += 1;
                }
                let best = *tally.values().max().unwrap();
                let cands: Vec<PhaseId> = tally.into_iter().filter(|&(_, c)| c == best).map(|(p, _)| p).collect();
                if cands.len() == 1 {
                    *counts.entry(cands[0]).or_default() += 1;
                    assigned += 1;
                    data.push(cands[0]);
                } else {
                    ties.push((data.len(), cands.clone()));
                    data.push(cands[0]);
                }
            }
        }
    }

    for (idx, cands) in ties {
        let total = (assigned + 1) as f64;
        let mut best = (f64::INFINITY, cands[0]);
        for &p in &cands {
            let mut dist = 0.0;
            let phases: std::collections::BTreeSet<PhaseId> =
                original.0.keys().chain(counts.keys()).copied().chain([p]).collect();
            for q in phases {
                let c = counts.get(&q).copied().unwrap_or(0) + usize::from(q == p);
                dist += (c as f64 / total - original.get(q)).abs();
            }
            if dist < best.0 {
                best = (dist, p);
            }
        }
        data[idx] = best.1;
        *counts.entry(best.1).or_default() += 1;
        assigned += 1;
    }

    Ok(VoxelGrid::new(&ext, grid.spacing() * 2.0, data)?.with_provenance(format!("{}:maj", grid.provenance)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{generate_synthetic, phase_fractions, SyntheticSpec};

    fn table() -> PhaseTable {
        PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)]).unwrap()
    }

    fn mean_young(grid: &VoxelGrid, table: &PhaseTable) -> f64 {
        grid.data().iter().map(|&p| table.effective(p).unwrap().0).sum::<f64>() / grid.len() as f64
    }

    #[test]
    fn mixture_of_two_by_two_patch() {
        let g = VoxelGrid::new(&[2, 2], 0.1, vec![PhaseId(0), PhaseId(0), PhaseId(1), PhaseId(1)]).unwrap();
        let (c, t) = coarsen_resolution_mixture(&g, &table()).unwrap();
        assert_eq!(c.extents(), &[1, 1]);
        assert_eq!(c.spacing(), 0.2);
        let (e, nu) = t.effective(c.data()[0]).unwrap();
        assert!((e - 35_000.0).abs() < 1e-9);
        assert!((nu - 0.3).abs() < 1e-15);
        assert_eq!(c.data()[0], PhaseId(2));
    }

    #[test]
    fn mixture_uniform_is_identity() {
        let g = VoxelGrid::uniform(&[4, 4, 4], 0.1, PhaseId(1)).unwrap();
        let (c, t) = coarsen_resolution_mixture(&g, &table()).unwrap();
        assert_eq!(c.extents(), &[2, 2, 2]);
        assert!(c.data().iter().all(|&p| p == PhaseId(1)));
        assert_eq!(t, table());
    }

    #[test]
    fn mixture_preserves_mean_young() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.4, seed: 9 }, &[4, 4], 0.1).unwrap();
        let (c, t) = coarsen_resolution_mixture(&g, &table()).unwrap();
        let before = mean_young(&g, &table());
        let after = mean_young(&c, &t);
        assert!((before - after).abs() <= 1e-12 * before);
    }

    #[test]
    fn mixture_rejects_odd() {
        let g = VoxelGrid::uniform(&[4, 3], 0.1, PhaseId(0)).unwrap();
        let err = coarsen_resolution_mixture(&g, &table()).unwrap_err();
        assert!(matches!(err, Error::OddExtent { axis: Axis::Y, extent: 3 }));
        assert!(coarsen_resolution_majority(&g, &phase_fractions(&g)).is_err());
    }

    #[test]
    fn majority_clear_winner() {
        let g = VoxelGrid::new(&[2, 2], 0.1, vec![PhaseId(0), PhaseId(0), PhaseId(0), PhaseId(1)]).unwrap();
        let c = coarsen_resolution_majority(&g, &phase_fractions(&g)).unwrap();
        assert_eq!(c.data(), &[PhaseId(0)]);
    }

    #[test]
    fn majority_tie_moves_towards_original() {
        // left block is clearly phase 0, right block is a tie; the original
        // fractions are 5/8 vs 3/8 so the global phase-0 fraction is already
        // too high after the first block and the tie goes to phase 1
        let d = |v: &[u32]| v.iter().map(|&p| PhaseId(p)).collect::<Vec<_>>();
        let g = VoxelGrid::new(&[4, 2], 0.1, d(&[0, 0, 0, 1, 0, 0, 1, 0])).unwrap();
        let orig = phase_fractions(&g);
        assert_eq!(orig.get(PhaseId(0)), 0.75);
        let g2 = VoxelGrid::new(&[4, 2], 0.1, d(&[0, 0, 0, 1, 0, 1, 1, 1])).unwrap();
        let c = coarsen_resolution_majority(&g2, &phase_fractions(&g2)).unwrap();
        // g2: left block {0,0,0,1} -> 0; right block {0,1,1,1} -> 1; no tie
        assert_eq!(c.data(), &d(&[0, 1])[..]);

        let tie = VoxelGrid::new(&[4, 2], 0.1, d(&[0, 0, 0, 1, 0, 0, 0, 1])).unwrap();
        let orig = PhaseFractions([(PhaseId(0), 0.5), (PhaseId(1), 0.5)].into_iter().collect());
        let c = coarsen_resolution_majority(&tie, &orig).unwrap();
        assert_eq!(c.data(), &d(&[0, 1])[..]);
        let orig0 = PhaseFractions([(PhaseId(0), 1.0)].into_iter().collect());
        let c0 = coarsen_resolution_majority(&tie, &orig0).unwrap();
        assert_eq!(c0.data(), &d(&[0, 0])[..]);
    }

    #[test]
    fn majority_uniform() {
        let g = VoxelGrid::uniform(&[4, 4, 2], 0.1, PhaseId(3)).unwrap();
        let c = coarsen_resolution_majority(&g, &phase_fractions(&g)).unwrap();
        assert_eq!(c.extents(), &[2, 2, 1]);
        assert!(c.data().iter().all(|&p| p == PhaseId(3)));
    }
}
