//! Nonconforming quadtree/octree meshes of axis-aligned squares and cubes.
//!
//! Geometry lives on an integer lattice whose unit is the edge length of a
//! level-0 element. An element of level `l` spans `2^l` lattice units.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::element::{nodes_per_element, CORNERS};
use crate::microstructure::{PhaseFractions, PhaseId, PhaseTable, VoxelGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    /// Lattice coordinates of the lower corner.
    pub origin: [u32; 3],
    /// Number of merges above the base resolution; edge = 2^level units.
    pub level: u8,
    pub phase: PhaseId,
    /// Effective Young's modulus (MPa) and Poisson ratio.
    pub young: f64,
    pub poisson: f64,
    /// Corner node ids in local order; only the first 2^dim are used.
    pub nodes: [u32; 8],
}

impl Element {
    pub fn size_units(&self) -> u32 {
        1 << self.level
    }
}

/// A node interpolated from master nodes on a coarser neighbor's edge or face.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HangingConstraint {
    pub slave: usize,
    pub masters: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim: usize,
    /// Domain extent per axis in lattice units (unused axes are 0).
    cells: [u32; 3],
    /// mm per lattice unit.
    unit: f64,
    nodes: Vec<[u32; 3]>,
    elements: Vec<Element>,
    hanging: Vec<HangingConstraint>,
    /// Bit `2a` set: node on the min face of axis `a`; bit `2a+1`: max face.
    boundary_tags: Vec<u8>,
    is_hanging: Vec<bool>,
}

impl Mesh {
    /// Builds node numbering, hanging constraints and boundary tags for a set
    /// of elements (their `nodes` fields are overwritten).
    pub fn from_elements(dim: usize, cells: [u32; 3], unit: f64, mut elements: Vec<Element>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidArgument(format!("mesh must be 2d or 3d, got {dim}")));
        }
        if !(unit > 0.0) {
            return Err(Error::DegenerateElement(format!("lattice unit {unit}")));
        }
        elements.sort_by_key(|e| (e.origin[2], e.origin[1], e.origin[0]));
        let stride = [1u64, cells[0] as u64 + 1, (cells[0] as u64 + 1) * (cells[1] as u64 + 1)];
        let key = |p: [u32; 3]| -> u64 { (0..3).map(|i| p[i] as u64 * stride[i]).sum() };

        // all corner points, numbered in lattice order
        let nen = nodes_per_element(dim);
        let mut points: BTreeMap<u64, [u32; 3]> = BTreeMap::new();
        for e in &elements {
            let s = e.size_units();
            for c in &CORNERS[..nen] {
                let p = [e.origin[0] + c[0] * s, e.origin[1] + c[1] * s, e.origin[2] + c[2] * s];
                points.insert(key(p), p);
            }
        }
        let mut index: BTreeMap<u64, u32> = BTreeMap::new();
        let nodes: Vec<[u32; 3]> = points
            .into_iter()
            .enumerate()
            .map(|(i, (k, p))| {
                index.insert(k, i as u32);
                p
            })
            .collect();
        for e in &mut elements {
            let s = e.size_units();
            for (a, c) in CORNERS[..nen].iter().enumerate() {
                let p = [e.origin[0] + c[0] * s, e.origin[1] + c[1] * s, e.origin[2] + c[2] * s];
                e.nodes[a] = index[&key(p)];
            }
        }

        // hanging nodes sit at edge midpoints / face centers of coarser elements
        let mut slaves: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for e in elements.iter().filter(|e| e.level > 0) {
            let s = e.size_units();
            let h = s / 2;
            let corner = |c: [u32; 3]| -> usize {
                let p = [e.origin[0] + c[0] * s, e.origin[1] + c[1] * s, e.origin[2] + c[2] * s];
                index[&key(p)] as usize
            };
            for (a, b) in edges(dim) {
                let (ca, cb) = (CORNERS[a], CORNERS[b]);
                let mid = [
                    e.origin[0] + (ca[0] + cb[0]) * h,
                    e.origin[1] + (ca[1] + cb[1]) * h,
                    e.origin[2] + (ca[2] + cb[2]) * h,
                ];
                if let Some(&n) = index.get(&key(mid)) {
                    slaves
                        .entry(n as usize)
                        .or_insert_with(|| vec![(corner(ca), 0.5), (corner(cb), 0.5)]);
                }
            }
            if dim == 3 {
                for face in FACES_3D {
                    let sum = face.iter().fold([0u32; 3], |acc, &a| {
                        [acc[0] + CORNERS[a][0], acc[1] + CORNERS[a][1], acc[2] + CORNERS[a][2]]
                    });
                    // face center = origin + sum / 4 * s
                    let center = [
                        e.origin[0] + sum[0] * s / 4,
                        e.origin[1] + sum[1] * s / 4,
                        e.origin[2] + sum[2] * s / 4,
                    ];
                    if let Some(&n) = index.get(&key(center)) {
                        slaves
                            .entry(n as usize)
                            .or_insert_with(|| face.iter().map(|&a| (corner(CORNERS[a]), 0.25)).collect());
                    }
                }
            }
        }
        let mut is_hanging = vec![false; nodes.len()];
        let hanging: Vec<HangingConstraint> = slaves
            .into_iter()
            .map(|(slave, masters)| {
                is_hanging[slave] = true;
                HangingConstraint { slave, masters }
            })
            .collect();

        let boundary_tags = nodes
            .iter()
            .map(|p| {
                let mut t = 0u8;
                for a in 0..dim {
                    if p[a] == 0 {
                        t |= 1 << (2 * a);
                    }
                    if p[a] == cells[a] {
                        t |= 1 << (2 * a + 1);
                    }
                }
                t
            })
            .collect();

        Ok(Mesh {
            dim,
            cells,
            unit,
            nodes,
            elements,
            hanging,
            boundary_tags,
            is_hanging,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Elements per edge at level 0 (the D of a uniform mesh).
    pub fn cells(&self) -> &[u32] {
        &self.cells[..self.dim]
    }

    pub(crate) fn cells3(&self) -> [u32; 3] {
        self.cells
    }

    /// Edge length of a level-0 element in mm.
    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn nodes(&self) -> &[[u32; 3]] {
        &self.nodes
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let p = self.nodes[n];
        [p[0] as f64 * self.unit, p[1] as f64 * self.unit, p[2] as f64 * self.unit]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn hanging_constraints(&self) -> &[HangingConstraint] {
        &self.hanging
    }

    pub fn is_hanging(&self, n: usize) -> bool {
        self.is_hanging[n]
    }

    pub fn boundary_tags(&self) -> &[u8] {
        &self.boundary_tags
    }

    pub fn on_boundary(&self, n: usize) -> bool {
        self.boundary_tags[n] != 0
    }

    pub fn element_size(&self, e: usize) -> f64 {
        self.elements[e].size_units() as f64 * self.unit
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        self.element_size(e).powi(self.dim as i32)
    }

    pub fn domain_size(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (a, si) in s.iter_mut().enumerate().take(self.dim) {
            *si = self.cells[a] as f64 * self.unit;
        }
        s
    }

    pub fn domain_volume(&self) -> f64 {
        self.domain_size()[..self.dim].iter().product()
    }

    pub fn max_level(&self) -> u8 {
        self.elements.iter().map(|e| e.level).max().unwrap_or(0)
    }

    /// Number of lattice cells (level-0 element slots).
    pub(crate) fn lattice_cells(&self) -> usize {
        self.cells[..self.dim].iter().map(|&c| c as usize).product()
    }

    #[inline]
    pub(crate) fn cell_index(&self, c: [u32; 3]) -> usize {
        c[0] as usize + self.cells[0] as usize * (c[1] as usize + self.cells[1] as usize * c[2] as usize)
    }

    /// Element index owning every lattice cell.
    pub fn cell_owner(&self) -> Vec<u32> {
        let mut owner = vec![u32::MAX; self.lattice_cells()];
        for (ei, e) in self.elements.iter().enumerate() {
            let s = e.size_units();
            let zr = if self.dim == 3 { s } else { 1 };
            for z in 0..zr {
                for y in 0..s {
                    for x in 0..s {
                        let c = [e.origin[0] + x, e.origin[1] + y, e.origin[2] + z];
                        owner[self.cell_index(c)] = ei as u32;
                    }
                }
            }
        }
        owner
    }

    /// Volume fractions per phase.
    pub fn phase_fractions(&self) -> PhaseFractions {
        let mut acc: BTreeMap<PhaseId, u64> = BTreeMap::new();
        for e in &self.elements {
            *acc.entry(e.phase).or_default() += (e.size_units() as u64).pow(self.dim as u32);
        }
        let v = self.lattice_cells() as f64;
        PhaseFractions(acc.into_iter().map(|(k, x)| (k, x as f64 / v)).collect())
    }

    /// Checks tiling, 2:1 balance and constraint weights; returns a
    /// description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let owner = self.cell_owner();
        let mut covered = 0usize;
        for e in &self.elements {
            covered += (e.size_units() as usize).pow(self.dim as u32);
        }
        if covered != owner.len() || owner.iter().any(|&o| o == u32::MAX) {
            return Err(format!("elements cover {covered} of {} cells", owner.len()));
        }
        let vol: f64 = (0..self.elements.len()).map(|e| self.element_volume(e)).sum();
        if (vol - self.domain_volume()).abs() > 1e-10 * self.domain_volume() {
            return Err(format!("volume {vol} != domain {}", self.domain_volume()));
        }
        for (ei, e) in self.elements.iter().enumerate() {
            for n in self.touching(&owner, e.origin, e.size_units()) {
                let other = &self.elements[n as usize];
                if (other.level as i32 - e.level as i32).abs() > 1 {
                    return Err(format!("elements {ei} and {n} violate 2:1 balance"));
                }
            }
        }
        for h in &self.hanging {
            let w: f64 = h.masters.iter().map(|m| m.1).sum();
            if (w - 1.0).abs() > 1e-14 || h.masters.iter().any(|m| !(m.1 > 0.0 && m.1 < 1.0)) {
                return Err(format!("bad weights on hanging node {}", h.slave));
            }
        }
        Ok(())
    }

    /// Owners of the lattice cells in the one-cell ring around a block.
    pub(crate) fn touching(&self, owner: &[u32], origin: [u32; 3], size: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let lo = |a: usize| origin[a] as i64 - 1;
        let hi = |a: usize| (origin[a] + size) as i64;
        let zr = if self.dim == 3 { (lo(2), hi(2)) } else { (0, 0) };
        for z in zr.0..=zr.1 {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let p = [x, y, z];
                    let inside = (0..self.dim).all(|a| p[a] >= origin[a] as i64 && p[a] < hi(a));
                    if inside {
                        continue;
                    }
                    if (0..self.dim).any(|a| p[a] < 0 || p[a] >= self.cells[a] as i64) {
                        continue;
                    }
                    let o = owner[self.cell_index([x as u32, y as u32, z as u32])];
                    if !out.contains(&o) {
                        out.push(o);
                    }
                }
            }
        }
        out
    }
}

/// Local corner pairs forming the element edges.
pub(crate) fn edges(dim: usize) -> Vec<(usize, usize)> {
    if dim == 2 {
        vec![(0, 1), (1, 2), (3, 2), (0, 3)]
    } else {
        vec![
            (0, 1),
            (3, 2),
            (4, 5),
            (7, 6),
            (0, 3),
            (1, 2),
            (4, 7),
            (5, 6),
            (0, 4),
            (1, 5),
            (2, 6),
            (3, 7),
        ]
    }
}

/// Corner quadruples of the six hexahedron faces.
pub(crate) const FACES_3D: [[usize; 4]; 6] = [
    [0, 3, 7, 4],
    [1, 2, 6, 5],
    [0, 1, 5, 4],
    [3, 2, 6, 7],
    [0, 1, 2, 3],
    [4, 5, 6, 7],
];

/// Uniform mesh with `k` sub-elements per voxel edge (D = k·R).
pub fn build_uniform_mesh(grid: &VoxelGrid, table: &PhaseTable, k: usize) -> Result<Mesh> {
    if k == 0 {
        return Err(Error::InvalidArgument("subdivision k must be at least 1".into()));
    }
    grid.validate_phases(table)?;
    let dim = grid.dim();
    let ext = grid.extents3();
    let mut cells = [0u32; 3];
    for a in 0..dim {
        cells[a] = (ext[a] * k) as u32;
    }
    let zr = if dim == 3 { cells[2] } else { 1 };
    let mut props = BTreeMap::new();
    for id in grid.phase_ids() {
        props.insert(id, table.effective(id)?);
    }
    let mut elements = Vec::with_capacity(grid.len() * k.pow(dim as u32));
    for z in 0..zr {
        for y in 0..cells[1] {
            for x in 0..cells[0] {
                let k32 = k as u32;
                let phase = grid.at((x / k32) as usize, (y / k32) as usize, (z / k32) as usize);
                let (young, poisson) = props[&phase];
                elements.push(Element {
                    origin: [x, y, z],
                    level: 0,
                    phase,
                    young,
                    poisson,
                    nodes: [0; 8],
                });
            }
        }
    }
    Mesh::from_elements(dim, cells, grid.spacing() / k as f64, elements)
}

/// Degrees of freedom of a mesh: `(free, deactivated)`, with
/// `free = dim × non-hanging nodes` and `deactivated = dim × hanging nodes`.
pub fn count_ndof(mesh: &Mesh) -> (usize, usize) {
    let hanging = mesh.hanging_constraints().len();
    let free = mesh.nodes().len() - hanging;
    (mesh.dim() * free, mesh.dim() * hanging)
}
