use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assembly::System;
use super::element::Kernel;
use super::tensor::{phase_stiffness, voigt_len};
use crate::coarsening::Mesh;
use crate::error::{Error, Result};
use crate::sparse::{pcg, Cholesky, CsrMatrix, LinearSolver, SolveStats, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Kubc,
    Pbc,
    Subc,
}

impl BoundaryCondition {
    pub const ALL: [BoundaryCondition; 3] = [BoundaryCondition::Kubc, BoundaryCondition::Pbc, BoundaryCondition::Subc];

    pub fn label(self) -> &'static str {
        match self {
            BoundaryCondition::Kubc => "KUBC",
            BoundaryCondition::Pbc => "PBC",
            BoundaryCondition::Subc => "SUBC",
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kubc" => Ok(BoundaryCondition::Kubc),
            "pbc" => Ok(BoundaryCondition::Pbc),
            "subc" => Ok(BoundaryCondition::Subc),
            _ => Err(Error::InvalidArgument(format!("unknown boundary condition '{s}'"))),
        }
    }
}

/// Macroscopic driver in Voigt notation (engineering shear strains).
/// Only the first `voigt_len(dim)` entries are used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "voigt", rename_all = "kebab-case")]
pub enum LoadKind {
    StrainDriven([f64; 6]),
    StressDriven([f64; 6]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroLoad {
    pub kind: LoadKind,
    pub bc: BoundaryCondition,
}

fn pad(v: &[f64]) -> Result<[f64; 6]> {
    if v.len() != 3 && v.len() != 6 {
        return Err(Error::InvalidArgument(format!(
            "Voigt vector needs 3 (2d) or 6 (3d) entries, got {}",
            v.len()
        )));
    }
    let mut out = [0.0; 6];
    out[..v.len()].copy_from_slice(v);
    Ok(out)
}

impl MacroLoad {
    pub fn strain(bc: BoundaryCondition, voigt: &[f64]) -> Result<Self> {
        if bc == BoundaryCondition::Subc {
            return Err(Error::InvalidArgument("SUBC needs a stress-driven load".into()));
        }
        Ok(MacroLoad {
            kind: LoadKind::StrainDriven(pad(voigt)?),
            bc,
        })
    }

    pub fn stress(voigt: &[f64]) -> Result<Self> {
        Ok(MacroLoad {
            kind: LoadKind::StressDriven(pad(voigt)?),
            bc: BoundaryCondition::Subc,
        })
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let v = match (self.kind, self.bc) {
            (LoadKind::StrainDriven(v), BoundaryCondition::Kubc | BoundaryCondition::Pbc) => v,
            (LoadKind::StressDriven(v), BoundaryCondition::Subc) => v,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} cannot be combined with this load kind",
                    self.bc
                )))
            }
        };
        if v[voigt_len(dim)..].iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidArgument("Voigt entries beyond the 2d set in a 2d load".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite load".into()));
        }
        Ok(())
    }
}

/// Full tensor of a Voigt vector; `shear_factor` is 0.5 for engineering
/// strains and 1 for stresses.
pub fn voigt_to_tensor(dim: usize, v: &[f64; 6], shear_factor: f64) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    if dim == 2 {
        t[0][0] = v[0];
        t[1][1] = v[1];
        t[0][1] = shear_factor * v[2];
        t[1][0] = t[0][1];
    } else {
        t[0][0] = v[0];
        t[1][1] = v[1];
        t[2][2] = v[2];
        t[0][1] = shear_factor * v[3];
        t[1][2] = shear_factor * v[4];
        t[0][2] = shear_factor * v[5];
        t[1][0] = t[0][1];
        t[2][1] = t[1][2];
        t[2][0] = t[0][2];
    }
    t
}

#[derive(Clone, Debug, Serialize)]
pub struct MicroSolution {
    pub load: MacroLoad,
    /// Per mesh node (hanging nodes included), mm.
    pub displacements: Vec<[f64; 3]>,
    /// Voigt strain per quadrature point, index `element * nqp + q`.
    pub qp_strain: Vec<[f64; 6]>,
    pub qp_stress: Vec<[f64; 6]>,
    /// Constraint forces `K u - f` at the free dofs; they vanish away from
    /// constrained dofs up to the solver tolerance.
    pub lagrange_multipliers: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Boundary-condition reduction of an assembled system, reusable across
/// load states.
pub struct BcOperator<'a> {
    system: &'a System,
    mesh: &'a Mesh,
    bc: BoundaryCondition,
    map: Vec<u32>,
    reduced: CsrMatrix,
    options: SolverOptions,
    factor: Option<Cholesky>,
}

const FIXED: u32 = u32::MAX;

impl<'a> BcOperator<'a> {
    pub fn new(system: &'a System, mesh: &'a Mesh, bc: BoundaryCondition) -> Result<Self> {
        Self::with_solver(system, mesh, bc, SolverOptions::default())
    }

    /// Builds the reduced operator; a direct solver is factorized here, once.
    pub fn with_solver(system: &'a System, mesh: &'a Mesh, bc: BoundaryCondition, options: SolverOptions) -> Result<Self> {
        let dim = system.dim;
        let exp = &system.expansion;
        let nfree = exp.n_free();
        let mut map = vec![FIXED; nfree * dim];
        match bc {
            BoundaryCondition::Kubc => {
                let mut next = 0u32;
                for (f, &node) in exp.free_nodes().iter().enumerate() {
                    if !mesh.on_boundary(node) {
                        for c in 0..dim {
                            map[f * dim + c] = next;
                            next += 1;
                        }
                    }
                }
            }
            BoundaryCondition::Subc => {
                let cells = mesh.cells3();
                let find = |p: [u32; 3]| -> usize {
                    let node = mesh.nodes().binary_search_by(|q| lattice_cmp(q, &p)).expect("domain corner");
                    exp.free_index(node).expect("domain corners are free")
                };
                let mut pinned = vec![false; nfree * dim];
                let o = find([0, 0, 0]);
                let x1 = find([cells[0], 0, 0]);
                for c in 0..dim {
                    pinned[o * dim + c] = true;
                }
                pinned[x1 * dim + 1] = true;
                if dim == 3 {
                    pinned[x1 * dim + 2] = true;
                    let y1 = find([0, cells[1], 0]);
                    pinned[y1 * dim + 2] = true;
                }
                let mut next = 0u32;
                for (i, m) in map.iter_mut().enumerate() {
                    if !pinned[i] {
                        *m = next;
                        next += 1;
                    }
                }
            }
            BoundaryCondition::Pbc => {
                let reps = periodic_representatives(mesh, system)?;
                let mut ids: Vec<u32> = reps.iter().copied().filter(|&r| r != FIXED).collect();
                ids.sort_unstable();
                ids.dedup();
                let slot: HashMap<u32, u32> = ids.iter().enumerate().map(|(i, &r)| (r, i as u32)).collect();
                for (f, &r) in reps.iter().enumerate() {
                    if r != FIXED {
                        for c in 0..dim {
                            map[f * dim + c] = slot[&r] * dim as u32 + c as u32;
                        }
                    }
                }
            }
        }
        let nred = map.iter().filter(|&&m| m != FIXED).map(|&m| m as usize + 1).max().unwrap_or(0);
        let k = &system.matrix;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nred];
        for i in 0..k.nrows() {
            let r = map[i];
            if r == FIXED {
                continue;
            }
            let (cols, vals) = k.row(i);
            let row = &mut rows[r as usize];
            for (&j, &v) in cols.iter().zip(vals) {
                let mj = map[j as usize];
                if mj != FIXED {
                    row.push((mj, v));
                }
            }
        }
        let reduced = CsrMatrix::from_rows(rows);
        let mut coords = vec![[u32::MAX; 3]; nred];
        for (i, &r) in map.iter().enumerate() {
            if r != FIXED {
                let p = mesh.nodes()[exp.free_nodes()[i / dim]];
                let slot = &mut coords[r as usize];
                if lattice_cmp(&p, slot).is_lt() {
                    *slot = p;
                }
            }
        }
        let factor = if options.method == LinearSolver::Cholesky && nred > 0 {
            Some(Cholesky::factor(&reduced, Some(&coords))?)
        } else {
            None
        };
        Ok(BcOperator {
            system,
            mesh,
            bc,
            map,
            reduced,
            options,
            factor,
        })
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Number of unknowns after the boundary-condition reduction.
    pub fn reduced_ndof(&self) -> usize {
        self.reduced.nrows()
    }

    pub fn solve(&self, load: &MacroLoad) -> Result<MicroSolution> {
        let dim = self.system.dim;
        load.validate(dim)?;
        if load.bc != self.bc {
            return Err(Error::InvalidArgument(format!(
                "load for {} given to a {} operator",
                load.bc, self.bc
            )));
        }
        let exp = &self.system.expansion;
        let nfull = exp.n_free() * dim;
        let mut u = vec![0.0; nfull];
        let mut f_ext = vec![0.0; nfull];
        match load.kind {
            LoadKind::StrainDriven(v) => {
                let eps = voigt_to_tensor(dim, &v, 0.5);
                for (f, &node) in exp.free_nodes().iter().enumerate() {
                    let x = self.mesh.node_position(node);
                    for i in 0..dim {
                        u[f * dim + i] = (0..dim).map(|j| eps[i][j] * x[j]).sum();
                    }
                }
            }
            LoadKind::StressDriven(v) => {
                f_ext = traction_loads(self.mesh, self.system, &v);
            }
        }
        let mut ku = vec![0.0; nfull];
        self.system.matrix.mul_vec(&u, &mut ku);
        let mut b = vec![0.0; self.reduced.nrows()];
        for i in 0..nfull {
            let r = self.map[i];
            if r != FIXED {
                b[r as usize] += f_ext[i] - ku[i];
            }
        }
        let (x, stats) = match &self.factor {
            Some(f) => f.solve(&self.reduced, &b, &self.options)?,
            None => pcg(&self.reduced, &b, &self.options)?,
        };
        for i in 0..nfull {
            let r = self.map[i];
            if r != FIXED {
                u[i] += x[r as usize];
            }
        }
        let SolveStats {
            iterations,
            relative_residual,
        } = stats;

        self.system.matrix.mul_vec(&u, &mut ku);
        let multipliers: Vec<f64> = ku.iter().zip(&f_ext).map(|(a, b)| a - b).collect();

        let free: Vec<[f64; 3]> = (0..exp.n_free())
            .map(|f| {
                let mut v = [0.0; 3];
                v[..dim].copy_from_slice(&u[f * dim..f * dim + dim]);
                v
            })
            .collect();
        let mut displacements = exp.prolongate(&free);
        if self.bc == BoundaryCondition::Subc {
            remove_rigid_motion(self.mesh, &mut displacements);
        }
        let (qp_strain, qp_stress) = qp_fields(self.mesh, &displacements)?;
        Ok(MicroSolution {
            load: *load,
            displacements,
            qp_strain,
            qp_stress,
            lagrange_multipliers: multipliers,
            iterations,
            relative_residual,
        })
    }
}

fn lattice_cmp(a: &[u32; 3], b: &[u32; 3]) -> std::cmp::Ordering {
    (a[2], a[1], a[0]).cmp(&(b[2], b[1], b[0]))
}

/// Free-node index of the periodic image in the "minus" corner/face for every
/// free node, `FIXED` for images of the origin.
fn periodic_representatives(mesh: &Mesh, system: &System) -> Result<Vec<u32>> {
    let dim = mesh.dim();
    let cells = mesh.cells3();
    let nodes = mesh.nodes();
    let lookup = |p: [u32; 3]| nodes.binary_search_by(|q| lattice_cmp(q, &p)).ok();
    let mut unmatched = Vec::new();
    for (n, p) in nodes.iter().enumerate() {
        if !mesh.on_boundary(n) {
            continue;
        }
        for a in 0..dim {
            let mut q = *p;
            if p[a] == 0 {
                q[a] = cells[a];
            } else if p[a] == cells[a] {
                q[a] = 0;
            } else {
                continue;
            }
            match lookup(q) {
                Some(m) if mesh.is_hanging(m) == mesh.is_hanging(n) => {}
                _ => {
                    unmatched.push(n);
                    break;
                }
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::NonMatchingPeriodicFaces { unmatched });
    }
    let exp = &system.expansion;
    let reps = exp
        .free_nodes()
        .iter()
        .map(|&node| {
            let mut q = nodes[node];
            for a in 0..dim {
                if q[a] == cells[a] {
                    q[a] = 0;
                }
            }
            if q == [0, 0, 0] {
                return FIXED;
            }
            let m = lookup(q).expect("checked above");
            exp.free_index(m).expect("checked above") as u32
        })
        .collect();
    Ok(reps)
}

/// Consistent nodal forces of a uniform stress field, `sum_e int B^T sigma dV`,
/// which equal the boundary tractions `sigma n`.
fn traction_loads(mesh: &Mesh, system: &System, stress: &[f64; 6]) -> Vec<f64> {
    let dim = mesh.dim();
    let kernel = Kernel::new(dim);
    let exp = &system.expansion;
    let mut f = vec![0.0; exp.n_free() * dim];
    let mut b = [[0.0; 24]; 6];
    let mut buf = Vec::new();
    for (ei, el) in mesh.elements().iter().enumerate() {
        let h = mesh.element_size(ei);
        let w = kernel.qp_volume(h);
        let mut fe = [0.0; 24];
        for q in 0..kernel.nqp {
            kernel.b_at(q, h, &mut b);
            for (r, fr) in fe.iter_mut().enumerate().take(kernel.ndof()) {
                *fr += w * (0..kernel.nv).map(|m| b[m][r] * stress[m]).sum::<f64>();
            }
        }
        for a in 0..kernel.nen {
            exp.expand(el.nodes[a] as usize, &mut buf);
            for &(fi, wt) in &buf {
                for c in 0..dim {
                    f[fi as usize * dim + c] += wt * fe[a * dim + c];
                }
            }
        }
    }
    f
}

/// Volume integrals of `u` and of `grad u` (`g[i][j] = du_i/dx_j`).
fn displacement_moments(mesh: &Mesh, u: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
    let dim = mesh.dim();
    let kernel = Kernel::new(dim);
    let mut mean = [0.0; 3];
    let mut grad = [[0.0; 3]; 3];
    for (ei, el) in mesh.elements().iter().enumerate() {
        let h = mesh.element_size(ei);
        let w = kernel.qp_volume(h);
        for q in 0..kernel.nqp {
            for a in 0..kernel.nen {
                let ua = u[el.nodes[a] as usize];
                for i in 0..dim {
                    mean[i] += w * kernel.n[q][a] * ua[i];
                    for j in 0..dim {
                        grad[i][j] += w * kernel.dn[q][a][j] * 2.0 / h * ua[i];
                    }
                }
            }
        }
    }
    (mean, grad)
}

/// Subtracts the rigid rotation and translation so that the volume integrals
/// of `u` and of the skew part of `grad u` vanish.
fn remove_rigid_motion(mesh: &Mesh, u: &mut [[f64; 3]]) {
    let dim = mesh.dim();
    let vol = mesh.domain_volume();
    let (_, g) = displacement_moments(mesh, u);
    let mut w = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            w[i][j] = 0.5 * (g[i][j] - g[j][i]) / vol;
        }
    }
    for (n, ui) in u.iter_mut().enumerate() {
        let x = mesh.node_position(n);
        for i in 0..dim {
            ui[i] -= (0..dim).map(|j| w[i][j] * x[j]).sum::<f64>();
        }
    }
    let (m, _) = displacement_moments(mesh, u);
    for ui in u.iter_mut() {
        for i in 0..dim {
            ui[i] -= m[i] / vol;
        }
    }
}

/// Strains and stresses at all quadrature points of a nodal displacement
/// field (one entry per mesh node).
pub fn qp_fields(mesh: &Mesh, u: &[[f64; 3]]) -> Result<(Vec<[f64; 6]>, Vec<[f64; 6]>)> {
    let dim = mesh.dim();
    if u.len() != mesh.nodes().len() {
        return Err(Error::InvalidArgument(format!(
            "field has {} nodes, mesh has {}",
            u.len(),
            mesh.nodes().len()
        )));
    }
    let kernel = Kernel::new(dim);
    let nqp = kernel.nqp;
    let mut tensors: HashMap<(u64, u64), [[f64; 6]; 6]> = HashMap::new();
    for el in mesh.elements() {
        let key = (el.young.to_bits(), el.poisson.to_bits());
        if let std::collections::hash_map::Entry::Vacant(v) = tensors.entry(key) {
            v.insert(phase_stiffness(dim, el.young, el.poisson)?.to_array());
        }
    }
    let per_element: Vec<Vec<([f64; 6], [f64; 6])>> = mesh
        .elements()
        .par_iter()
        .enumerate()
        .map(|(ei, el)| {
            let h = mesh.element_size(ei);
            let c = &tensors[&(el.young.to_bits(), el.poisson.to_bits())];
            let mut ue = [0.0; 24];
            for a in 0..kernel.nen {
                let ua = u[el.nodes[a] as usize];
                ue[a * dim..a * dim + dim].copy_from_slice(&ua[..dim]);
            }
            (0..nqp)
                .map(|q| {
                    let mut eps = [0.0; 6];
                    kernel.strain(q, h, &ue[..kernel.ndof()], &mut eps);
                    let mut sig = [0.0; 6];
                    for i in 0..kernel.nv {
                        sig[i] = (0..kernel.nv).map(|j| c[i][j] * eps[j]).sum();
                    }
                    (eps, sig)
                })
                .collect()
        })
        .collect();
    let mut strain = Vec::with_capacity(mesh.elements().len() * nqp);
    let mut stress = Vec::with_capacity(mesh.elements().len() * nqp);
    for v in per_element {
        for (e, s) in v {
            strain.push(e);
            stress.push(s);
        }
    }
    Ok((strain, stress))
}

pub fn solve_micro(system: &System, mesh: &Mesh, load: &MacroLoad) -> Result<MicroSolution> {
    BcOperator::new(system, mesh, load.bc)?.solve(load)
}

/// Volume average of a quadrature-point field.
pub fn volume_average(mesh: &Mesh, field: &[[f64; 6]]) -> [f64; 6] {
    let nqp = 1 << mesh.dim();
    let mut acc = [0.0; 6];
    for (ei, _) in mesh.elements().iter().enumerate() {
        let w = mesh.element_volume(ei) / nqp as f64;
        for v in &field[ei * nqp..(ei + 1) * nqp] {
            for i in 0..6 {
                acc[i] += w * v[i];
            }
        }
    }
    let vol = mesh.domain_volume();
    acc.map(|a| a / vol)
}

/// Element contributions `sum_q w sigma:eps`.
pub fn element_energies(mesh: &Mesh, strain: &[[f64; 6]], stress: &[[f64; 6]]) -> Vec<f64> {
    let nqp = 1 << mesh.dim();
    (0..mesh.elements().len())
        .map(|ei| {
            let w = mesh.element_volume(ei) / nqp as f64;
            (ei * nqp..(ei + 1) * nqp)
                .map(|k| w * strain[k].iter().zip(&stress[k]).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect()
}

pub fn energy_norm_squared(solution: &MicroSolution, mesh: &Mesh) -> f64 {
    element_energies(mesh, &solution.qp_strain, &solution.qp_stress).iter().sum()
}

/// `||u||_A`, the square root of twice the strain energy.
pub fn energy_norm(solution: &MicroSolution, mesh: &Mesh) -> f64 {
    energy_norm_squared(solution, mesh).sqrt()
}

/// Energy norm of an arbitrary nodal field, e.g. a difference of solutions.
pub fn field_energy_norm(mesh: &Mesh, u: &[[f64; 3]]) -> Result<f64> {
    let (e, s) = qp_fields(mesh, u)?;
    Ok(element_energies(mesh, &e, &s).iter().sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HillMandel {
    pub residual: f64,
    /// Set when `<sigma>:<eps>` vanishes and `residual` is absolute.
    pub absolute: bool,
}

pub fn hill_mandel_residual(solution: &MicroSolution, mesh: &Mesh) -> HillMandel {
    let vol = mesh.domain_volume();
    let mean_work = energy_norm_squared(solution, mesh) / vol;
    let s = volume_average(mesh, &solution.qp_stress);
    let e = volume_average(mesh, &solution.qp_strain);
    let macro_work: f64 = s.iter().zip(&e).map(|(a, b)| a * b).sum();
    let diff = (mean_work - macro_work).abs();
    if macro_work == 0.0 {
        HillMandel {
            residual: diff,
            absolute: true,
        }
    } else {
        HillMandel {
            residual: diff / macro_work.abs(),
            absolute: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsening::{adaptive_coarsen, build_uniform_mesh};
    use crate::fem::assemble;
    use crate::microstructure::{generate_synthetic, Axis, PhaseId, PhaseTable, SyntheticSpec, VoxelGrid};

    fn table() -> PhaseTable {
        PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)]).unwrap()
    }

    fn load_for(dim: usize, bc: BoundaryCondition, c: &[[f64; 6]; 6], eps: &[f64]) -> MacroLoad {
        match bc {
            BoundaryCondition::Subc => {
                let nv = voigt_len(dim);
                let s: Vec<f64> = (0..nv).map(|i| (0..nv).map(|j| c[i][j] * eps[j]).sum()).collect();
                MacroLoad::stress(&s).unwrap()
            }
            _ => MacroLoad::strain(bc, eps).unwrap(),
        }
    }

    fn patch_test(mesh: &Mesh, dim: usize) {
        let sys = assemble(mesh).unwrap();
        let c = phase_stiffness(dim, 20_000.0, 0.3).unwrap().to_array();
        let eps: Vec<f64> = if dim == 2 {
            vec![1e-3, -4e-4, 6e-4]
        } else {
            vec![1e-3, -4e-4, 2e-4, 6e-4, -3e-4, 5e-4]
        };
        let mut e6 = [0.0; 6];
        e6[..eps.len()].copy_from_slice(&eps);
        let t = voigt_to_tensor(dim, &e6, 0.5);
        for bc in BoundaryCondition::ALL {
            let sol = solve_micro(&sys, mesh, &load_for(dim, bc, &c, &eps)).unwrap();
            let scale = 1e-3 * 0.1 * mesh.cells()[0] as f64;
            for (n, u) in sol.displacements.iter().enumerate() {
                let x = mesh.node_position(n);
                for i in 0..dim {
                    let mut exact: f64 = (0..dim).map(|j| t[i][j] * x[j]).sum();
                    if bc == BoundaryCondition::Subc {
                        // symmetric field centred at the domain centre
                        let xc = mesh.domain_size();
                        exact -= (0..dim).map(|j| t[i][j] * xc[j] / 2.0).sum::<f64>();
                    }
                    assert!((u[i] - exact).abs() <= 1e-9 * scale, "{bc} node {n}: {} vs {exact}", u[i]);
                }
            }
            let sig = (0..voigt_len(dim)).map(|i| (0..voigt_len(dim)).map(|j| c[i][j] * eps[j]).sum::<f64>());
            for (i, s) in sig.enumerate() {
                for q in &sol.qp_stress {
                    assert!((q[i] - s).abs() <= 1e-9 * 20.0);
                }
            }
            assert!(hill_mandel_residual(&sol, mesh).residual < 1e-8);
        }
    }

    #[test]
    fn affine_patch_uniform_and_hanging() {
        for dim in [2usize, 3] {
            let n = if dim == 2 { 8 } else { 4 };
            let g = VoxelGrid::uniform(&vec![n; dim], 0.1, PhaseId(1)).unwrap();
            let m = build_uniform_mesh(&g, &table(), 1).unwrap();
            patch_test(&m, dim);
        }
        // single phase but coarsened with hanging nodes: the phase labels are
        // different, the material is the same
        let t = PhaseTable::solids(&[(0, 20_000.0, 0.3), (1, 20_000.0, 0.3)]).unwrap();
        let g = generate_synthetic(&SyntheticSpec::SphereInclusion { radius: 2.5 }, &[16, 16], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &t, 1).unwrap();
        let (m, _) = adaptive_coarsen(&m, 2, true).unwrap();
        assert!(!m.hanging_constraints().is_empty());
        patch_test(&m, 2);
        let g = generate_synthetic(&SyntheticSpec::SphereInclusion { radius: 2.0 }, &[8, 8, 8], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &t, 1).unwrap();
        let (m, _) = adaptive_coarsen(&m, 1, false).unwrap();
        assert!(!m.hanging_constraints().is_empty());
        patch_test(&m, 3);
    }

    #[test]
    fn zero_strain_gives_zero_field() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 1 }, &[6, 6], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let sys = assemble(&m).unwrap();
        let sol = solve_micro(&sys, &m, &MacroLoad::strain(BoundaryCondition::Kubc, &[0.0; 3]).unwrap()).unwrap();
        assert!(sol.displacements.iter().all(|u| *u == [0.0; 3]));
        assert_eq!(energy_norm(&sol, &m), 0.0);
        assert!(hill_mandel_residual(&sol, &m).absolute);
    }

    #[test]
    fn laminate_phase_strains_under_pbc() {
        // layers normal to x, strain along the layering (y): both phases carry
        // exactly eps_yy = 1e-3 and eps_xx follows from sigma_xx continuity
        let g = generate_synthetic(
            &SyntheticSpec::Laminate {
                axis: Axis::X,
                fraction: 0.5,
                periods: 1,
            },
            &[8, 8],
            0.1,
        )
        .unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let sys = assemble(&m).unwrap();
        let sol = solve_micro(&sys, &m, &MacroLoad::strain(BoundaryCondition::Pbc, &[0.0, 1e-3, 0.0]).unwrap()).unwrap();
        // plane strain: sigma_xx = (l+2m) e_xx + l e_yy equal in both phases, mean e_xx = 0
        let lm = |e: f64| crate::fem::lame(e, 0.3);
        let (l0, m0) = lm(50_000.0);
        let (l1, m1) = lm(20_000.0);
        let (a0, a1) = (l0 + 2.0 * m0, l1 + 2.0 * m1);
        // a0 e0 + l0 d = a1 e1 + l1 d, e0 + e1 = 0
        let d = 1e-3;
        let e0 = (l1 - l0) * d / (a0 + a1);
        let e1 = -e0;
        for (ei, el) in m.elements().iter().enumerate() {
            let want = if el.phase == PhaseId(0) { e0 } else { e1 };
            for q in 0..4 {
                let s = sol.qp_strain[ei * 4 + q];
                assert!((s[0] - want).abs() <= 1e-8 * d, "{} vs {want}", s[0]);
                assert!((s[1] - d).abs() <= 1e-8 * d);
                assert!(s[2].abs() <= 1e-8 * d);
            }
        }
        let avg = volume_average(&m, &sol.qp_strain);
        assert!((avg[1] - d).abs() < 1e-8 * d && avg[0].abs() < 1e-8 * d);
    }

    #[test]
    fn energy_norm_equals_quadratic_form() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 4 }, &[6, 6], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let sys = assemble(&m).unwrap();
        let sol = solve_micro(&sys, &m, &MacroLoad::strain(BoundaryCondition::Kubc, &[1e-3, 0.0, 2e-3]).unwrap()).unwrap();
        let u: Vec<f64> = sys
            .expansion()
            .free_nodes()
            .iter()
            .flat_map(|&n| [sol.displacements[n][0], sol.displacements[n][1]])
            .collect();
        let mut ku = vec![0.0; u.len()];
        sys.matrix().mul_vec(&u, &mut ku);
        let quad: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        assert!((energy_norm_squared(&sol, &m) - quad).abs() <= 1e-10 * quad);
        let homog = VoxelGrid::uniform(&[4, 4], 0.1, PhaseId(1)).unwrap();
        let hm = build_uniform_mesh(&homog, &table(), 1).unwrap();
        let hs = assemble(&hm).unwrap();
        let eps = [1e-3, 0.0, 2e-3];
        let hsol = solve_micro(&hs, &hm, &MacroLoad::strain(BoundaryCondition::Pbc, &eps).unwrap()).unwrap();
        let c = phase_stiffness(2, 20_000.0, 0.3).unwrap().to_array();
        let w: f64 = (0..3).map(|i| (0..3).map(|j| eps[i] * c[i][j] * eps[j]).sum::<f64>()).sum();
        let vol = hm.domain_volume();
        assert!((energy_norm_squared(&hsol, &hm) - vol * w).abs() <= 1e-10 * vol * w);
    }

    #[test]
    fn pbc_rejects_unmatched_faces() {
        // coarsening one side only: a block merges at the left boundary while
        // its periodic image on the right stays fine
        let d: Vec<PhaseId> = (0..64).map(|i| PhaseId(u32::from((4..7).contains(&(i % 8))))).collect();
        let g = VoxelGrid::new(&[8, 8], 0.1, d).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let (m, _) = adaptive_coarsen(&m, 1, false).unwrap();
        let sys = assemble(&m).unwrap();
        let r = solve_micro(&sys, &m, &MacroLoad::strain(BoundaryCondition::Pbc, &[1e-3, 0.0, 0.0]).unwrap());
        match r {
            Err(Error::NonMatchingPeriodicFaces { unmatched }) => assert!(!unmatched.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn direct_and_iterative_agree() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.4, seed: 8 }, &[4, 4, 4], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let sys = assemble(&m).unwrap();
        let pcg_opts = SolverOptions {
            method: LinearSolver::Pcg,
            tolerance: 1e-12,
            ..Default::default()
        };
        for bc in BoundaryCondition::ALL {
            let v = [1e-3, 0.0, 0.0, 5e-4, 0.0, 0.0];
            let load = if bc == BoundaryCondition::Subc {
                MacroLoad::stress(&[30.0, 0.0, 0.0, 10.0, 0.0, 0.0]).unwrap()
            } else {
                MacroLoad::strain(bc, &v).unwrap()
            };
            let a = BcOperator::new(&sys, &m, bc).unwrap().solve(&load).unwrap();
            let b = BcOperator::with_solver(&sys, &m, bc, pcg_opts).unwrap().solve(&load).unwrap();
            let scale = a.displacements.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
            for (x, y) in a.displacements.iter().flatten().zip(b.displacements.iter().flatten()) {
                assert!((x - y).abs() <= 1e-8 * scale, "{bc}");
            }
        }
    }

    #[test]
    fn load_kind_checked() {
        assert!(MacroLoad::strain(BoundaryCondition::Subc, &[0.0; 3]).is_err());
        let g = VoxelGrid::uniform(&[2, 2], 0.1, PhaseId(0)).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let sys = assemble(&m).unwrap();
        let bad = MacroLoad {
            kind: LoadKind::StressDriven([0.0; 6]),
            bc: BoundaryCondition::Kubc,
        };
        assert!(solve_micro(&sys, &m, &bad).is_err());
    }
}
