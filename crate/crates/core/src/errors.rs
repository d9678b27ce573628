//! Energy-norm discretization errors: the actual error against a nested
//! reference solution and a recovery-based estimate that keeps separate
//! nodal stress sets per phase.

use rayon::prelude::*;
use serde::Serialize;

use crate::coarsening::Mesh;
use crate::error::{Error, Result};
use crate::fem::element::{fill_b, shape_gradients, shape_values, Kernel, CORNERS};
use crate::fem::{element_energies, phase_stiffness, MicroSolution, NodeExpansion};
use crate::microstructure::PhaseId;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveredEntry {
    pub phase: PhaseId,
    pub stress: [f64; 6],
    pub strain: [f64; 6],
}

/// Nodal stresses and strains, one entry per phase meeting at the node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveredField {
    pub nodes: Vec<Vec<RecoveredEntry>>,
}

impl RecoveredField {
    pub fn get(&self, node: usize, phase: PhaseId) -> Option<&RecoveredEntry> {
        self.nodes[node].iter().find(|e| e.phase == phase)
    }
}

/// `E[a][q]`: weight of quadrature point `q` in the value extrapolated to
/// corner `a`. The quadrature points span a box scaled by 1/sqrt(3), so a
/// corner sits at +-sqrt(3) in quadrature-point coordinates.
fn extrapolation_matrix(dim: usize) -> [[f64; 8]; 8] {
    let r3 = 3f64.sqrt();
    let mut m = [[0.0; 8]; 8];
    for (a, row) in m.iter_mut().enumerate().take(1 << dim) {
        let mut xi = [0.0; 3];
        for (i, x) in xi.iter_mut().enumerate().take(dim) {
            *x = r3 * if CORNERS[a][i] == 1 { 1.0 } else { -1.0 };
        }
        shape_values(dim, &xi, row);
    }
    m
}

/// Extrapolates quadrature-point values of one element to its corners.
pub fn extrapolate_to_corners(dim: usize, qp: &[[f64; 6]]) -> Vec<[f64; 6]> {
    let e = extrapolation_matrix(dim);
    (0..1 << dim)
        .map(|a| {
            let mut out = [0.0; 6];
            for (q, v) in qp.iter().enumerate() {
                for i in 0..6 {
                    out[i] += e[a][q] * v[i];
                }
            }
            out
        })
        .collect()
}

pub fn recover_stresses(mesh: &Mesh, solution: &MicroSolution) -> RecoveredField {
    let dim = mesh.dim();
    let nen = 1 << dim;
    let e = extrapolation_matrix(dim);
    // (phase, sum stress, sum strain, count)
    let mut acc: Vec<Vec<(PhaseId, [f64; 6], [f64; 6], u32)>> = vec![Vec::new(); mesh.nodes().len()];
    for (ei, el) in mesh.elements().iter().enumerate() {
        let sq = &solution.qp_stress[ei * nen..(ei + 1) * nen];
        let eq = &solution.qp_strain[ei * nen..(ei + 1) * nen];
        for a in 0..nen {
            let mut s = [0.0; 6];
            let mut t = [0.0; 6];
            for q in 0..nen {
                for i in 0..6 {
                    s[i] += e[a][q] * sq[q][i];
                    t[i] += e[a][q] * eq[q][i];
                }
            }
            let list = &mut acc[el.nodes[a] as usize];
            match list.iter_mut().find(|x| x.0 == el.phase) {
                Some(x) => {
                    for i in 0..6 {
                        x.1[i] += s[i];
                        x.2[i] += t[i];
                    }
                    x.3 += 1;
                }
                None => list.push((el.phase, s, t, 1)),
            }
        }
    }
    let mut nodes: Vec<Vec<RecoveredEntry>> = acc
        .iter()
        .map(|list| {
            let mut v: Vec<RecoveredEntry> = list
                .iter()
                .map(|(p, s, t, n)| RecoveredEntry {
                    phase: *p,
                    stress: s.map(|x| x / *n as f64),
                    strain: t.map(|x| x / *n as f64),
                })
                .collect();
            v.sort_by_key(|e| e.phase);
            v
        })
        .collect();

    if !mesh.hanging_constraints().is_empty() {
        let exp = NodeExpansion::new(mesh);
        let mut buf = Vec::new();
        let mut updates = Vec::new();
        for h in mesh.hanging_constraints() {
            exp.expand(h.slave, &mut buf);
            let mut entries = nodes[h.slave].clone();
            for entry in entries.iter_mut() {
                let mut s = [0.0; 6];
                let mut t = [0.0; 6];
                let mut complete = true;
                for &(f, w) in &buf {
                    let master = exp.free_nodes()[f as usize];
                    match nodes[master].iter().find(|m| m.phase == entry.phase) {
                        Some(m) => {
                            for i in 0..6 {
                                s[i] += w * m.stress[i];
                                t[i] += w * m.strain[i];
                            }
                        }
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if complete {
                    entry.stress = s;
                    entry.strain = t;
                }
            }
            updates.push((h.slave, entries));
        }
        for (n, entries) in updates {
            nodes[n] = entries;
        }
    }
    RecoveredField { nodes }
}

/// A global energy-norm error and its per-element contributions (both as
/// norms, not squares).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElementErrors {
    pub total: f64,
    pub per_element: Vec<f64>,
}

impl ElementErrors {
    fn from_squares(sq: Vec<f64>) -> Self {
        let total = sq.iter().sum::<f64>().max(0.0).sqrt();
        ElementErrors {
            total,
            per_element: sq.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
        }
    }
}

fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_e sum_q w (sigma* - sigma_h):(eps* - eps_h)` with the recovered
/// fields interpolated from the element's own-phase nodal entries.
pub fn estimated_error(mesh: &Mesh, solution: &MicroSolution, recovered: &RecoveredField) -> ElementErrors {
    let dim = mesh.dim();
    let kernel = Kernel::new(dim);
    let nen = kernel.nen;
    let sq: Vec<f64> = mesh
        .elements()
        .par_iter()
        .enumerate()
        .map(|(ei, el)| {
            let w = mesh.element_volume(ei) / nen as f64;
            let corner: Vec<&RecoveredEntry> = (0..nen)
                .map(|a| {
                    recovered
                        .get(el.nodes[a] as usize, el.phase)
                        .expect("every corner of an element carries its phase")
                })
                .collect();
            let mut acc = 0.0;
            for q in 0..nen {
                let mut ds = solution.qp_stress[ei * nen + q].map(|x| -x);
                let mut de = solution.qp_strain[ei * nen + q].map(|x| -x);
                for (a, c) in corner.iter().enumerate() {
                    let n = kernel.n[q][a];
                    for i in 0..6 {
                        ds[i] += n * c.stress[i];
                        de[i] += n * c.strain[i];
                    }
                }
                acc += w * dot6(&ds, &de);
            }
            acc
        })
        .collect();
    ElementErrors::from_squares(sq)
}

/// Integer number of reference lattice units per coarse lattice unit.
fn nesting_factor(coarse: &Mesh, reference: &Mesh) -> Result<u32> {
    if coarse.dim() != reference.dim() {
        return Err(Error::NotNested("dimensions differ".into()));
    }
    let ratio = coarse.unit() / reference.unit();
    let f = ratio.round();
    if f < 1.0 || (ratio - f).abs() > 1e-9 * ratio {
        return Err(Error::NotNested(format!(
            "element size ratio {ratio} is not a positive integer"
        )));
    }
    let f = f as u32;
    for a in 0..coarse.dim() {
        if coarse.cells()[a] * f != reference.cells()[a] {
            return Err(Error::NotNested(format!("extent mismatch along axis {a}")));
        }
    }
    Ok(f)
}

/// `sum w (sigma_ref - sigma_h):(eps_ref - eps_h)` over the reference
/// quadrature points, with the coarse fields evaluated at each reference
/// point inside its containing coarse element. Per-element values are
/// collected on the coarse elements.
pub fn actual_error(
    mesh: &Mesh,
    solution: &MicroSolution,
    ref_mesh: &Mesh,
    ref_solution: &MicroSolution,
) -> Result<ElementErrors> {
    let factor = nesting_factor(mesh, ref_mesh)?;
    let dim = mesh.dim();
    let kernel = Kernel::new(dim);
    let nen = kernel.nen;
    let owner = mesh.cell_owner();
    let mut tensors = std::collections::HashMap::new();
    for el in mesh.elements() {
        let key = (el.young.to_bits(), el.poisson.to_bits());
        if let std::collections::hash_map::Entry::Vacant(v) = tensors.entry(key) {
            v.insert(phase_stiffness(dim, el.young, el.poisson)?.to_array());
        }
    }

    let contributions: Vec<(u32, f64)> = ref_mesh
        .elements()
        .par_iter()
        .enumerate()
        .map(|(ri, rel)| -> Result<(u32, f64)> {
            let rs = rel.size_units();
            let mut cell = [0u32; 3];
            for a in 0..dim {
                cell[a] = rel.origin[a] / factor;
            }
            let ci = owner[mesh.cell_index(cell)];
            let cel = &mesh.elements()[ci as usize];
            let cs = cel.size_units() * factor;
            for a in 0..dim {
                let lo = cel.origin[a] * factor;
                if rel.origin[a] < lo || rel.origin[a] + rs > lo + cs {
                    return Err(Error::NotNested(format!(
                        "reference element {ri} straddles coarse element {ci}"
                    )));
                }
            }
            let c = &tensors[&(cel.young.to_bits(), cel.poisson.to_bits())];
            let h_coarse = mesh.element_size(ci as usize);
            let mut ue = [0.0; 24];
            for a in 0..nen {
                let u = solution.displacements[cel.nodes[a] as usize];
                ue[a * dim..a * dim + dim].copy_from_slice(&u[..dim]);
            }
            let w = ref_mesh.element_volume(ri) / nen as f64;
            let mut acc = 0.0;
            for q in 0..nen {
                // reference point in coarse natural coordinates
                let mut xi = [0.0; 3];
                for a in 0..dim {
                    let s = if CORNERS[q][a] == 1 { 1.0 } else { -1.0 };
                    let local = (rel.origin[a] - cel.origin[a] * factor) as f64 + 0.5 * rs as f64 * (1.0 + s / 3f64.sqrt());
                    xi[a] = 2.0 * local / cs as f64 - 1.0;
                }
                let mut grad = [[0.0; 3]; 8];
                shape_gradients(dim, &xi, &mut grad);
                for g in grad.iter_mut().take(nen) {
                    for gi in g.iter_mut().take(dim) {
                        *gi *= 2.0 / h_coarse;
                    }
                }
                let mut b = [[0.0; 24]; 6];
                fill_b(dim, &grad, &mut b);
                let mut eh = [0.0; 6];
                for i in 0..kernel.nv {
                    eh[i] = (0..nen * dim).map(|j| b[i][j] * ue[j]).sum();
                }
                let mut sh = [0.0; 6];
                for i in 0..kernel.nv {
                    sh[i] = (0..kernel.nv).map(|j| c[i][j] * eh[j]).sum();
                }
                let k = ri * nen + q;
                let mut ds = ref_solution.qp_stress[k];
                let mut de = ref_solution.qp_strain[k];
                for i in 0..6 {
                    ds[i] -= sh[i];
                    de[i] -= eh[i];
                }
                acc += w * dot6(&ds, &de);
            }
            Ok((ci, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sq = vec![0.0; mesh.elements().len()];
    for (ci, v) in contributions {
        sq[ci as usize] += v;
    }
    Ok(ElementErrors::from_squares(sq))
}

/// `e_bar / e`, absent when `e` vanishes.
pub fn effectivity(e_bar: f64, e: f64) -> Option<f64> {
    (e > 0.0).then(|| e_bar / e)
}

/// `100 err_e / ||u||_A(e)` per element, absent where the element energy
/// vanishes.
pub fn relative_error_field(per_element: &[f64], mesh: &Mesh, solution: &MicroSolution) -> Vec<Option<f64>> {
    element_energies(mesh, &solution.qp_strain, &solution.qp_stress)
        .iter()
        .zip(per_element)
        .map(|(&energy, &err)| (energy > 0.0).then(|| 100.0 * err / energy.sqrt()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub solution_norm: f64,
    pub e_mic: Option<f64>,
    pub e_bar_mic: f64,
    pub theta: Option<f64>,
    pub relative_estimated: Vec<Option<f64>>,
    pub relative_actual: Option<Vec<Option<f64>>>,
}

/// Estimated error, and with a reference solution the actual error and the
/// effectivity index.
pub fn error_report(
    mesh: &Mesh,
    solution: &MicroSolution,
    reference: Option<(&Mesh, &MicroSolution)>,
) -> Result<ErrorReport> {
    let recovered = recover_stresses(mesh, solution);
    let est = estimated_error(mesh, solution, &recovered);
    let actual = reference
        .map(|(m, s)| actual_error(mesh, solution, m, s))
        .transpose()?;
    let solution_norm = crate::fem::energy_norm(solution, mesh);
    Ok(ErrorReport {
        solution_norm,
        e_mic: actual.as_ref().map(|a| a.total),
        e_bar_mic: est.total,
        theta: actual.as_ref().and_then(|a| effectivity(est.total, a.total)),
        relative_estimated: relative_error_field(&est.per_element, mesh, solution),
        relative_actual: actual.map(|a| relative_error_field(&a.per_element, mesh, solution)),
    })
}

/// Coarse displacement field evaluated at the nodes of a nested reference
/// mesh.
pub fn prolongate_to(mesh: &Mesh, solution: &MicroSolution, ref_mesh: &Mesh) -> Result<Vec<[f64; 3]>> {
    let factor = nesting_factor(mesh, ref_mesh)?;
    let dim = mesh.dim();
    let owner = mesh.cell_owner();
    let cells = mesh.cells3();
    Ok(ref_mesh
        .nodes()
        .iter()
        .map(|p| {
            let mut cell = [0u32; 3];
            for a in 0..dim {
                cell[a] = (p[a] / factor).min(cells[a] - 1);
            }
            let el = &mesh.elements()[owner[mesh.cell_index(cell)] as usize];
            let cs = (el.size_units() * factor) as f64;
            let mut xi = [0.0; 3];
            for a in 0..dim {
                xi[a] = 2.0 * (p[a] as f64 - (el.origin[a] * factor) as f64) / cs - 1.0;
            }
            let mut n = [0.0; 8];
            shape_values(dim, &xi, &mut n);
            let mut u = [0.0; 3];
            for (a, na) in n.iter().enumerate().take(1 << dim) {
                let ua = solution.displacements[el.nodes[a] as usize];
                for i in 0..dim {
                    u[i] += na * ua[i];
                }
            }
            u
        })
        .collect())
}
