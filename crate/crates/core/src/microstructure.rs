//! Multiphase voxel images: phase tables, grids, ingestion, synthetic
//! generators, subvolumes, slices and phase fractions.
//!
//! Grids are stored x-fastest (row-major with x as the innermost index). A
//! 2d grid is a 3d grid with a single z layer and `dim == 2`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a material phase stored in every voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseId(pub u32);

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        match i {
            0 => Axis::X,
            1 => Axis::Y,
            _ => Axis::Z,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Constitutive data of a phase. Pores carry no user constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Material {
    Solid { young: f64, poisson: f64 },
    Pore,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub id: PhaseId,
    #[serde(flatten)]
    pub material: Material,
}

/// Poisson ratio assigned to the compliant pore filler.
pub const PORE_POISSON: f64 = 0.3;

/// Phase id → elastic constants. Moduli are in MPa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    entries: Vec<PhaseEntry>,
    pore_stiffness_ratio: f64,
}

impl PhaseTable {
    pub const DEFAULT_PORE_STIFFNESS_RATIO: f64 = 1e-6;

    pub fn new(entries: Vec<PhaseEntry>, pore_stiffness_ratio: f64) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::InvalidPhaseTable(format!("duplicate phase id {}", e.id)));
            }
            if let Material::Solid { young, poisson } = e.material {
                if !(young > 0.0) || !(poisson > -1.0 && poisson < 0.5) {
                    return Err(Error::InvalidPhaseTable(format!(
                        "phase {}: need E > 0 and -1 < nu < 0.5, got E = {young}, nu = {poisson}",
                        e.id
                    )));
                }
            }
        }
        if !(pore_stiffness_ratio > 0.0) {
            return Err(Error::InvalidPhaseTable(format!(
                "pore stiffness ratio must be positive, got {pore_stiffness_ratio}"
            )));
        }
        let has_pore = entries.iter().any(|e| e.material == Material::Pore);
        let has_solid = entries.iter().any(|e| e.material != Material::Pore);
        if has_pore && !has_solid {
            return Err(Error::InvalidPhaseTable(
                "pore phases need at least one solid phase to derive their stiffness".into(),
            ));
        }
        Ok(PhaseTable {
            entries,
            pore_stiffness_ratio,
        })
    }

    /// Solid phases given as `(id, E, nu)`, no pores.
    pub fn solids(phases: &[(u32, f64, f64)]) -> Result<Self> {
        Self::new(
            phases
                .iter()
                .map(|&(id, young, poisson)| PhaseEntry {
                    id: PhaseId(id),
                    material: Material::Solid { young, poisson },
                })
                .collect(),
            Self::DEFAULT_PORE_STIFFNESS_RATIO,
        )
    }

    /// Aggregate (0), mortar (1) and pore (2) of the concrete specimen.
    pub fn concrete() -> Self {
        Self::new(
            vec![
                PhaseEntry {
                    id: PhaseId(0),
                    material: Material::Solid {
                        young: 50_000.0,
                        poisson: 0.3,
                    },
                },
                PhaseEntry {
                    id: PhaseId(1),
                    material: Material::Solid {
                        young: 20_000.0,
                        poisson: 0.3,
                    },
                },
                PhaseEntry {
                    id: PhaseId(2),
                    material: Material::Pore,
                },
            ],
            Self::DEFAULT_PORE_STIFFNESS_RATIO,
        )
        .expect("static table is valid")
    }

    pub fn entries(&self) -> &[PhaseEntry] {
        &self.entries
    }

    pub fn pore_stiffness_ratio(&self) -> f64 {
        self.pore_stiffness_ratio
    }

    pub fn contains(&self, id: PhaseId) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    pub fn get(&self, id: PhaseId) -> Option<&PhaseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    fn min_solid_young(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| match e.material {
                Material::Solid { young, .. } => Some(young),
                Material::Pore => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Effective `(E, nu)` used by the solver; pores become a compliant filler.
    pub fn effective(&self, id: PhaseId) -> Result<(f64, f64)> {
        match self.get(id).ok_or(Error::UnknownPhase(id))?.material {
            Material::Solid { young, poisson } => Ok((young, poisson)),
            Material::Pore => Ok((self.pore_stiffness_ratio * self.min_solid_young(), PORE_POISSON)),
        }
    }

    pub fn next_id(&self) -> PhaseId {
        PhaseId(self.entries.iter().map(|e| e.id.0 + 1).max().unwrap_or(0))
    }

    /// Appends a solid phase under a fresh id and returns the id.
    pub fn push_solid(&mut self, young: f64, poisson: f64) -> PhaseId {
        let id = self.next_id();
        self.entries.push(PhaseEntry {
            id,
            material: Material::Solid { young, poisson },
        });
        id
    }

    /// Returns a copy with every solid Young's modulus multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> PhaseTable {
        let mut out = self.clone();
        for e in &mut out.entries {
            if let Material::Solid { young, .. } = &mut e.material {
                *young *= factor;
            }
        }
        out
    }
}

/// Volume fraction per phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct PhaseFractions(pub BTreeMap<PhaseId, f64>);

impl PhaseFractions {
    pub fn get(&self, id: PhaseId) -> f64 {
        self.0.get(&id).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// L1 distance over the union of phases.
    pub fn l1_distance(&self, other: &PhaseFractions) -> f64 {
        let ids: BTreeSet<_> = self.0.keys().chain(other.0.keys()).collect();
        ids.into_iter()
            .map(|&id| (self.get(id) - other.get(id)).abs())
            .sum()
    }
}

/// A 2d or 3d raster of phase ids with physical voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    dim: usize,
    extents: [usize; 3],
    spacing: f64,
    data: Vec<PhaseId>,
    pub provenance: String,
}

impl VoxelGrid {
    pub fn new(extents: &[usize], spacing: f64, data: Vec<PhaseId>) -> Result<Self> {
        let dim = extents.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidArgument(format!(
                "grid must be 2d or 3d, got {dim} extents"
            )));
        }
        if extents.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("grid extents must be positive".into()));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        let mut ext = [1; 3];
        ext[..dim].copy_from_slice(extents);
        let n: usize = ext.iter().product();
        if data.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(VoxelGrid {
            dim,
            extents: ext,
            spacing,
            data,
            provenance: String::new(),
        })
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        extents: &[usize],
        spacing: f64,
        mut f: impl FnMut(usize, usize, usize) -> PhaseId,
    ) -> Result<Self> {
        let mut ext = [1; 3];
        ext[..extents.len().min(3)].copy_from_slice(&extents[..extents.len().min(3)]);
        let mut data = Vec::with_capacity(ext.iter().product());
        for z in 0..ext[2] {
            for y in 0..ext[1] {
                for x in 0..ext[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(extents, spacing, data)
    }

    pub fn uniform(extents: &[usize], spacing: f64, phase: PhaseId) -> Result<Self> {
        Self::from_fn(extents, spacing, |_, _, _| phase)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Voxels per axis; only the first `dim` entries are meaningful.
    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub(crate) fn extents3(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn data(&self) -> &[PhaseId] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.extents[0] * (y + self.extents[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> PhaseId {
        self.data[self.index(x, y, z)]
    }

    /// Physical edge lengths in mm.
    pub fn size_mm(&self) -> Vec<f64> {
        self.extents().iter().map(|&n| n as f64 * self.spacing).collect()
    }

    pub fn phase_ids(&self) -> BTreeSet<PhaseId> {
        self.data.iter().copied().collect()
    }

    pub fn validate_phases(&self, table: &PhaseTable) -> Result<()> {
        match self.phase_ids().into_iter().find(|&id| !table.contains(id)) {
            Some(id) => Err(Error::UnknownPhase(id)),
            None => Ok(()),
        }
    }

    pub fn with_provenance(mut self, label: impl Into<String>) -> Self {
        self.provenance = label.into();
        self
    }
}

/// Exact voxel-count ratios per phase.
pub fn phase_fractions(grid: &VoxelGrid) -> PhaseFractions {
    let mut counts: BTreeMap<PhaseId, usize> = BTreeMap::new();
    for &p in grid.data() {
        *counts.entry(p).or_default() += 1;
    }
    let n = grid.len() as f64;
    PhaseFractions(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// On-disk voxel formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoxelFormat {
    /// One unsigned byte per voxel, x fastest, no header.
    RawU8,
    /// A directory with one CSV file per z slice (sorted by file name);
    /// each row is one y, comma-separated phase ids along x.
    CsvSlices,
}

fn label_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_voxel_grid(
    path: &Path,
    format: VoxelFormat,
    extents: &[usize],
    spacing: f64,
    table: &PhaseTable,
) -> Result<VoxelGrid> {
    let expected: usize = extents.iter().product();
    let data = match format {
        VoxelFormat::RawU8 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() != expected {
                return Err(Error::SizeMismatch {
                    expected,
                    actual: bytes.len(),
                });
            }
            bytes.into_iter().map(|b| PhaseId(b as u32)).collect()
        }
        VoxelFormat::CsvSlices => read_csv_slices(path, extents)?,
    };
    let grid = VoxelGrid::new(extents, spacing, data)?.with_provenance(label_from_path(path));
    grid.validate_phases(table)?;
    Ok(grid)
}

fn read_csv_slices(dir: &Path, extents: &[usize]) -> Result<Vec<PhaseId>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    let (nx, ny) = (extents[0], extents[1]);
    let nz = extents.get(2).copied().unwrap_or(1);
    if files.len() != nz {
        return Err(Error::InvalidArgument(format!(
            "expected {nz} csv slices in {}, found {}",
            dir.display(),
            files.len()
        )));
    }
    let mut data = Vec::with_capacity(nx * ny * nz);
    for file in &files {
        let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != ny {
            return Err(Error::InvalidArgument(format!(
                "{}: expected {ny} rows, found {}",
                file.display(),
                rows.len()
            )));
        }
        for (y, row) in rows.iter().enumerate() {
            let before = data.len();
            for cell in row.split(',') {
                let v: u32 = cell.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "{}: row {y}: not a phase id: {cell:?}",
                        file.display()
                    ))
                })?;
                data.push(PhaseId(v));
            }
            if data.len() - before != nx {
                return Err(Error::InvalidArgument(format!(
                    "{}: row {y}: expected {nx} values, found {}",
                    file.display(),
                    data.len() - before
                )));
            }
        }
    }
    Ok(data)
}

/// Writes the grid as raw bytes. Fails if a phase id does not fit a byte.
pub fn save_raw_u8(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let bytes = grid
        .data()
        .iter()
        .map(|p| {
            u8::try_from(p.0).map_err(|_| {
                Error::InvalidArgument(format!("phase id {p} does not fit the raw-u8 format"))
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `slice_0000.csv`, `slice_0001.csv`, ... into `dir`.
pub fn save_csv_slices(grid: &VoxelGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [nx, ny, nz] = grid.extents3();
    for z in 0..nz {
        let mut text = String::new();
        for y in 0..ny {
            let row: Vec<String> = (0..nx).map(|x| grid.at(x, y, z).to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = dir.join(format!("slice_{z:04}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Cubic (or square) subvolume of `size` voxels per edge starting at `origin`.
pub fn extract_subvolume(grid: &VoxelGrid, origin: &[usize], size: usize) -> Result<VoxelGrid> {
    let dim = grid.dim();
    if origin.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "origin has {} components for a {dim}d grid",
            origin.len()
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("subvolume size must be positive".into()));
    }
    for (a, (&o, &n)) in origin.iter().zip(grid.extents()).enumerate() {
        if o + size > n {
            return Err(Error::OutOfBounds {
                axis: Axis::from_index(a),
                detail: format!("origin {o} + size {size} exceeds extent {n}"),
            });
        }
    }
    let mut o3 = [0; 3];
    o3[..dim].copy_from_slice(origin);
    let ext = vec![size; dim];
    let sub = VoxelGrid::from_fn(&ext, grid.spacing(), |x, y, z| {
        grid.at(x + o3[0], y + o3[1], z + o3[2])
    })?;
    let s_label = size as f64 * grid.spacing() / crate::LENGTH_UNIT_MM;
    Ok(sub.with_provenance(format!(
        "{}@{:?}:S{}",
        grid.provenance,
        origin,
        fmt_size(s_label)
    )))
}

fn fmt_size(s: f64) -> String {
    if (s - s.round()).abs() < 1e-9 {
        format!("{}", s.round() as i64)
    } else {
        format!("{s}")
    }
}

/// Origin of a centered subvolume of `size` voxels per edge.
pub fn centered_origin(grid: &VoxelGrid, size: usize) -> Vec<usize> {
    grid.extents()
        .iter()
        .map(|&n| n.saturating_sub(size) / 2)
        .collect()
}

/// 2d slice normal to `axis`. The in-plane axes keep their order:
/// Z → (x, y), Y → (x, z), X → (y, z).
pub fn extract_slice(grid: &VoxelGrid, axis: Axis, index: usize) -> Result<VoxelGrid> {
    if grid.dim() != 3 {
        return Err(Error::InvalidArgument("slices need a 3d grid".into()));
    }
    let [nx, ny, nz] = grid.extents3();
    let n_axis = grid.extents3()[axis.index()];
    if index >= n_axis {
        return Err(Error::OutOfBounds {
            axis,
            detail: format!("slice index {index} not below extent {n_axis}"),
        });
    }
    let slice = match axis {
        Axis::Z => VoxelGrid::from_fn(&[nx, ny], grid.spacing(), |a, b, _| grid.at(a, b, index)),
        Axis::Y => VoxelGrid::from_fn(&[nx, nz], grid.spacing(), |a, b, _| grid.at(a, index, b)),
        Axis::X => VoxelGrid::from_fn(&[ny, nz], grid.spacing(), |a, b, _| grid.at(index, a, b)),
    }?;
    Ok(slice.with_provenance(format!("{}:{axis}{index}", grid.provenance)))
}

/// Synthetic two-phase microstructures (phase ids 0 and 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    /// Layers normal to `axis`; in each of `periods` periods the first
    /// `fraction` of the voxels are phase 0, the rest phase 1.
    Laminate {
        axis: Axis,
        fraction: f64,
        #[serde(default = "one")]
        periods: usize,
    },
    /// Phase-1 ball (disk in 2d) of `radius` voxels centered in the domain.
    SphereInclusion { radius: f64 },
    /// Alternating blocks of `cell` voxels per edge.
    Checkerboard {
        #[serde(default = "one")]
        cell: usize,
    },
    /// Independent voxels, phase 1 with probability `p`.
    Random { p: f64, seed: u64 },
    /// Periodic Gaussian-filtered noise thresholded so that exactly
    /// `round(p * n)` voxels are phase 1.
    Blobs {
        p: f64,
        correlation_length: f64,
        seed: u64,
    },
}

fn one() -> usize {
    1
}

pub fn generate_synthetic(spec: &SyntheticSpec, extents: &[usize], spacing: f64) -> Result<VoxelGrid> {
    let dim = extents.len();
    let mut ext = [1usize; 3];
    ext[..dim.min(3)].copy_from_slice(&extents[..dim.min(3)]);
    let grid = match *spec {
        SyntheticSpec::Laminate {
            axis,
            fraction,
            periods,
        } => {
            if !(0.0..=1.0).contains(&fraction) || periods == 0 {
                return Err(Error::InvalidArgument(
                    "laminate needs fraction in [0,1] and at least one period".into(),
                ));
            }
            let n = ext[axis.index()];
            if axis.index() >= dim || n % periods != 0 {
                return Err(Error::InvalidArgument(format!(
                    "laminate axis {axis} extent {n} not divisible into {periods} periods"
                )));
            }
            let period = n / periods;
            let first = (fraction * period as f64).round() as usize;
            VoxelGrid::from_fn(extents, spacing, |x, y, z| {
                let c = [x, y, z][axis.index()] % period;
                PhaseId(u32::from(c >= first))
            })?
        }
        SyntheticSpec::SphereInclusion { radius } => {
            let center: Vec<f64> = ext.iter().map(|&n| n as f64 / 2.0).collect();
            VoxelGrid::from_fn(extents, spacing, |x, y, z| {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let r2: f64 = (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum();
                PhaseId(u32::from(r2 <= radius * radius))
            })?
        }
        SyntheticSpec::Checkerboard { cell } => {
            if cell == 0 {
                return Err(Error::InvalidArgument("checkerboard cell must be positive".into()));
            }
            VoxelGrid::from_fn(extents, spacing, |x, y, z| {
                PhaseId(((x / cell + y / cell + z / cell) % 2) as u32)
            })?
        }
        SyntheticSpec::Random { p, seed } => {
            check_probability(p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            VoxelGrid::from_fn(extents, spacing, |_, _, _| PhaseId(u32::from(rng.gen::<f64>() < p)))?
        }
        SyntheticSpec::Blobs {
            p,
            correlation_length,
            seed,
        } => {
            check_probability(p)?;
            if !(correlation_length >= 0.0) {
                return Err(Error::InvalidArgument("correlation length must be >= 0".into()));
            }
            blobs(extents, spacing, p, correlation_length, seed)?
        }
    };
    Ok(grid.with_provenance(format!("synthetic:{}", spec_label(spec))))
}

fn spec_label(spec: &SyntheticSpec) -> String {
    match spec {
        SyntheticSpec::Laminate { axis, fraction, periods } => {
            format!("laminate({axis},{fraction},{periods})")
        }
        SyntheticSpec::SphereInclusion { radius } => format!("sphere({radius})"),
        SyntheticSpec::Checkerboard { cell } => format!("checkerboard({cell})"),
        SyntheticSpec::Random { p, seed } => format!("random({p},{seed})"),
        SyntheticSpec::Blobs {
            p,
            correlation_length,
            seed,
        } => format!("blobs({p},{correlation_length},{seed})"),
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("p must lie in [0,1], got {p}")))
    }
}

fn blobs(extents: &[usize], spacing: f64, p: f64, corr: f64, seed: u64) -> Result<VoxelGrid> {
    let dim = extents.len();
    let mut ext = [1usize; 3];
    ext[..dim].copy_from_slice(extents);
    let n: usize = ext.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    if corr > 0.0 {
        let radius = (3.0 * corr).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i as f64).powi(2) / (2.0 * corr * corr)).exp())
            .collect();
        let stride = [1, ext[0], ext[0] * ext[1]];
        for axis in 0..dim {
            let len = ext[axis] as isize;
            let mut out = vec![0.0; n];
            for (idx, o) in out.iter_mut().enumerate() {
                let c = (idx / stride[axis]) as isize % len;
                let base = idx as isize - c * stride[axis] as isize;
                *o = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let cc = (c + k as isize - radius).rem_euclid(len);
                        w * field[(base + cc * stride[axis] as isize) as usize]
                    })
                    .sum();
            }
            field = out;
        }
    }

    let ones = (p * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // descending field value, ties by index
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut data = vec![PhaseId(0); n];
    for &i in &order[..ones] {
        data[i] = PhaseId(1);
    }
    VoxelGrid::new(extents, spacing, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table3() -> PhaseTable {
        PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3), (2, 10_000.0, 0.2)]).unwrap()
    }

    #[test]
    fn raw_load_counts_fractions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.raw");
        fs::write(&path, [0u8, 0, 1, 1, 0, 1, 0, 1]).unwrap();
        let g = load_voxel_grid(&path, VoxelFormat::RawU8, &[2, 2, 2], 0.1, &table3()).unwrap();
        assert_eq!(g.extents(), &[2, 2, 2]);
        assert_eq!(g.provenance, "cube");
        let f = phase_fractions(&g);
        assert_eq!(f.get(PhaseId(0)), 0.5);
        assert_eq!(f.get(PhaseId(1)), 0.5);
    }

    #[test]
    fn raw_load_rejects_short_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.raw");
        fs::write(&path, [0u8; 4]).unwrap();
        let err = load_voxel_grid(&path, VoxelFormat::RawU8, &[2, 2, 2], 0.1, &table3()).unwrap_err();
        assert!(err.to_string().contains("expected 8 bytes, got 4"), "{err}");
    }

    #[test]
    fn raw_load_rejects_unknown_phase() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.raw");
        fs::write(&path, [0u8, 1, 2, 7]).unwrap();
        let err = load_voxel_grid(&path, VoxelFormat::RawU8, &[2, 2], 0.1, &table3()).unwrap_err();
        assert!(matches!(err, Error::UnknownPhase(PhaseId(7))));
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn csv_slices_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.4, seed: 3 }, &[3, 4, 5], 0.1).unwrap();
        save_csv_slices(&g, dir.path()).unwrap();
        let back = load_voxel_grid(dir.path(), VoxelFormat::CsvSlices, &[3, 4, 5], 0.1, &table3()).unwrap();
        assert_eq!(back.data(), g.data());
    }

    #[test]
    fn fractions_direct_count() {
        let uniform = VoxelGrid::uniform(&[3, 3], 0.1, PhaseId(2)).unwrap();
        assert_eq!(phase_fractions(&uniform).0, BTreeMap::from([(PhaseId(2), 1.0)]));

        let mut data = vec![PhaseId(0); 9];
        data.extend(vec![PhaseId(1); 7]);
        let g = VoxelGrid::new(&[4, 4], 0.1, data).unwrap();
        let f = phase_fractions(&g);
        assert_eq!(f.get(PhaseId(0)), 0.5625);
        assert_eq!(f.get(PhaseId(1)), 0.4375);
    }

    #[test]
    fn subvolume_identity_and_interior() {
        let g = VoxelGrid::from_fn(&[4, 4, 4], 0.1, |x, y, z| PhaseId((x + 4 * y + 16 * z) as u32)).unwrap();
        let full = extract_subvolume(&g, &[0, 0, 0], 4).unwrap();
        assert_eq!(full.data(), g.data());

        let inner = extract_subvolume(&g, &[1, 1, 1], 2).unwrap();
        let expected: Vec<PhaseId> = [21, 22, 25, 26, 37, 38, 41, 42].iter().map(|&v| PhaseId(v)).collect();
        assert_eq!(inner.data(), &expected[..]);
        assert_eq!(inner.spacing(), 0.1);

        let err = extract_subvolume(&g, &[3, 0, 0], 2).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { axis: Axis::X, .. }));
    }

    #[test]
    fn slices() {
        let g = VoxelGrid::from_fn(&[3, 4, 5], 0.1, |_, _, z| PhaseId((z % 2) as u32)).unwrap();
        let s = extract_slice(&g, Axis::Z, 1).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.extents(), &[3, 4]);
        assert!(s.data().iter().all(|&p| p == PhaseId(1)));

        let c = VoxelGrid::uniform(&[3, 4, 5], 0.1, PhaseId(1)).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let s = extract_slice(&c, axis, 2).unwrap();
            assert!(s.data().iter().all(|&p| p == PhaseId(1)));
        }
        let xz = extract_slice(&g, Axis::Y, 0).unwrap();
        assert_eq!(xz.extents(), &[3, 5]);
        assert!(extract_slice(&g, Axis::Z, 5).is_err());
    }

    #[test]
    fn generators() {
        let lam = generate_synthetic(
            &SyntheticSpec::Laminate { axis: Axis::X, fraction: 0.5, periods: 1 },
            &[4, 4, 4],
            0.1,
        )
        .unwrap();
        let f = phase_fractions(&lam);
        assert_eq!(f.get(PhaseId(0)), 0.5);
        assert_eq!(f.get(PhaseId(1)), 0.5);
        assert_eq!(lam.at(1, 3, 2), PhaseId(0));
        assert_eq!(lam.at(2, 0, 0), PhaseId(1));

        let a = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 1 }, &[8, 8, 8], 0.1).unwrap();
        let b = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 1 }, &[8, 8, 8], 0.1).unwrap();
        assert_eq!(a, b);

        let cb = generate_synthetic(&SyntheticSpec::Checkerboard { cell: 1 }, &[2, 2], 0.1).unwrap();
        assert_eq!(cb.data(), &[PhaseId(0), PhaseId(1), PhaseId(1), PhaseId(0)]);
        assert_eq!(phase_fractions(&cb).get(PhaseId(0)), 0.5);

        let bl = generate_synthetic(
            &SyntheticSpec::Blobs { p: 0.3, correlation_length: 2.0, seed: 4 },
            &[20, 20],
            0.1,
        )
        .unwrap();
        assert_eq!(phase_fractions(&bl).get(PhaseId(1)), 120.0 / 400.0);
    }

    #[test]
    fn pore_stiffness_is_derived() {
        let t = PhaseTable::concrete();
        assert_eq!(t.effective(PhaseId(2)).unwrap(), (20_000.0 * 1e-6, PORE_POISSON));
        assert!(t.effective(PhaseId(9)).is_err());
    }

    #[test]
    fn phase_table_validation() {
        assert!(PhaseTable::solids(&[(0, 1.0, 0.5)]).is_err());
        assert!(PhaseTable::solids(&[(0, 0.0, 0.2)]).is_err());
        assert!(PhaseTable::solids(&[(0, 1.0, 0.2), (0, 2.0, 0.2)]).is_err());
    }
}
