use std::collections::HashMap;

use crate::coarsening::Mesh;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

use super::element::Kernel;
use super::tensor::phase_stiffness;

/// Maps every mesh node onto free (non-hanging) nodes. Hanging nodes are
/// expanded recursively through their masters, so chained constraints end
/// on free nodes only.
#[derive(Clone, Debug)]
pub struct NodeExpansion {
    free_index: Vec<u32>,
    free_nodes: Vec<usize>,
    hanging: HashMap<usize, Vec<(u32, f64)>>,
}

impl NodeExpansion {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.nodes().len();
        let mut free_index = vec![u32::MAX; n];
        let mut free_nodes = Vec::with_capacity(n);
        for (i, fi) in free_index.iter_mut().enumerate() {
            if !mesh.is_hanging(i) {
                *fi = free_nodes.len() as u32;
                free_nodes.push(i);
            }
        }
        let direct: HashMap<usize, &[(usize, f64)]> = mesh
            .hanging_constraints()
            .iter()
            .map(|h| (h.slave, h.masters.as_slice()))
            .collect();
        let mut hanging: HashMap<usize, Vec<(u32, f64)>> = HashMap::new();
        fn resolve(
            node: usize,
            direct: &HashMap<usize, &[(usize, f64)]>,
            free_index: &[u32],
            memo: &mut HashMap<usize, Vec<(u32, f64)>>,
        ) -> Vec<(u32, f64)> {
            if free_index[node] != u32::MAX {
                return vec![(free_index[node], 1.0)];
            }
            if let Some(v) = memo.get(&node) {
                return v.clone();
            }
            let mut acc: Vec<(u32, f64)> = Vec::new();
            for &(m, w) in direct[&node] {
                for (f, wf) in resolve(m, direct, free_index, memo) {
                    match acc.iter_mut().find(|(g, _)| *g == f) {
                        Some(slot) => slot.1 += w * wf,
                        None => acc.push((f, w * wf)),
                    }
                }
            }
            acc.sort_by_key(|&(f, _)| f);
            memo.insert(node, acc.clone());
            acc
        }
        for h in mesh.hanging_constraints() {
            resolve(h.slave, &direct, &free_index, &mut hanging);
        }
        NodeExpansion {
            free_index,
            free_nodes,
            hanging,
        }
    }

    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    /// Mesh node id of each free node.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        let f = self.free_index[node];
        (f != u32::MAX).then_some(f as usize)
    }

    /// Free nodes and weights that determine `node`.
    pub fn expand(&self, node: usize, out: &mut Vec<(u32, f64)>) {
        out.clear();
        match self.free_index(node) {
            Some(f) => out.push((f as u32, 1.0)),
            None => out.extend_from_slice(&self.hanging[&node]),
        }
    }

    /// Values at all mesh nodes from values at free nodes.
    pub fn prolongate(&self, free_values: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let n = self.free_index.len();
        let mut out = vec![[0.0; 3]; n];
        let mut buf = Vec::new();
        for (node, o) in out.iter_mut().enumerate() {
            self.expand(node, &mut buf);
            for &(f, w) in &buf {
                for c in 0..3 {
                    o[c] += w * free_values[f as usize][c];
                }
            }
        }
        out
    }
}

/// Element stiffness matrices keyed by material and element level.
#[derive(Debug)]
pub(crate) struct StiffnessCache {
    kernel: Kernel,
    unit: f64,
    map: HashMap<(u64, u64, u8), Vec<f64>>,
}

impl StiffnessCache {
    pub fn new(mesh: &Mesh) -> Self {
        StiffnessCache {
            kernel: Kernel::new(mesh.dim()),
            unit: mesh.unit(),
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, young: f64, poisson: f64, level: u8) -> Result<&[f64]> {
        let key = (young.to_bits(), poisson.to_bits(), level);
        if !self.map.contains_key(&key) {
            let c = phase_stiffness(self.kernel.dim, young, poisson)?.to_array();
            let h = self.unit * (1u64 << level) as f64;
            let k = self.kernel.stiffness(h, &c);
            self.map.insert(key, k);
        }
        Ok(&self.map[&key])
    }
}

/// Stiffness matrix over the free-node dofs (dof `f*dim + c` for free node
/// `f`), with hanging-node dofs folded into their masters.
#[derive(Clone, Debug)]
pub struct System {
    pub(crate) dim: usize,
    pub(crate) matrix: CsrMatrix,
    pub(crate) expansion: NodeExpansion,
}

impl System {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn expansion(&self) -> &NodeExpansion {
        &self.expansion
    }

    /// Equals `count_ndof(mesh).0`.
    pub fn ndof(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Element-wise expanded corner lists (free node, weight) of one element.
fn element_expansion(mesh: &Mesh, exp: &NodeExpansion, e: usize, nen: usize) -> Vec<Vec<(u32, f64)>> {
    let mut buf = Vec::new();
    mesh.elements()[e].nodes[..nen]
        .iter()
        .map(|&n| {
            exp.expand(n as usize, &mut buf);
            buf.clone()
        })
        .collect()
}

pub fn assemble(mesh: &Mesh) -> Result<System> {
    let dim = mesh.dim();
    let nen = 1 << dim;
    let exp = NodeExpansion::new(mesh);
    let nfree = exp.n_free();
    if nfree == 0 {
        return Err(Error::InvalidArgument("mesh has no free nodes".into()));
    }

    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); nfree];
    let mut touched: Vec<u32> = Vec::new();
    for e in 0..mesh.elements().len() {
        touched.clear();
        for list in element_expansion(mesh, &exp, e, nen) {
            touched.extend(list.iter().map(|&(f, _)| f));
        }
        touched.sort_unstable();
        touched.dedup();
        for &i in &touched {
            adj[i as usize].extend_from_slice(&touched);
        }
    }
    let mut pattern: Vec<Vec<u32>> = Vec::with_capacity(nfree * dim);
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
        let cols: Vec<u32> = row
            .iter()
            .flat_map(|&j| (0..dim as u32).map(move |c| j * dim as u32 + c))
            .collect();
        for _ in 0..dim {
            pattern.push(cols.clone());
        }
    }
    drop(adj);
    let mut matrix = CsrMatrix::from_pattern(&pattern);
    drop(pattern);

    let mut cache = StiffnessCache::new(mesh);
    let nd = nen * dim;
    for (ei, el) in mesh.elements().iter().enumerate() {
        let ke = cache.get(el.young, el.poisson, el.level)?;
        let lists = element_expansion(mesh, &exp, ei, nen);
        for a in 0..nen {
            for &(i, wi) in &lists[a] {
                for b in 0..nen {
                    for &(j, wj) in &lists[b] {
                        let w = wi * wj;
                        for c1 in 0..dim {
                            let row = i as usize * dim + c1;
                            let krow = (a * dim + c1) * nd + b * dim;
                            for c2 in 0..dim {
                                matrix.add(row, j * dim as u32 + c2 as u32, w * ke[krow + c2]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(System {
        dim,
        matrix,
        expansion: exp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsening::{adaptive_coarsen, build_uniform_mesh};
    use crate::fem::element::{element_stiffness, ElementGeometry};
    use crate::microstructure::{generate_synthetic, PhaseId, PhaseTable, SyntheticSpec, VoxelGrid};
    use rand::{Rng, SeedableRng};

    fn table() -> PhaseTable {
        PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)]).unwrap()
    }

    #[test]
    fn single_element_equals_element_matrix() {
        for dim in [2usize, 3] {
            let g = VoxelGrid::uniform(&vec![1; dim], 0.1, PhaseId(1)).unwrap();
            let m = build_uniform_mesh(&g, &table(), 1).unwrap();
            let s = assemble(&m).unwrap();
            let c = crate::fem::phase_stiffness(dim, 20_000.0, 0.3).unwrap();
            let ke = element_stiffness(
                &ElementGeometry {
                    dim,
                    origin: [0.0; 3],
                    size: 0.1,
                },
                &c,
            )
            .unwrap();
            // node numbering is lattice order; local order differs for corners 2,3 (and 6,7)
            let local_to_global: Vec<usize> = if dim == 2 {
                vec![0, 1, 3, 2]
            } else {
                vec![0, 1, 3, 2, 4, 5, 7, 6]
            };
            let k = s.matrix().to_dense();
            for a in 0..(1 << dim) {
                for b in 0..(1 << dim) {
                    for c1 in 0..dim {
                        for c2 in 0..dim {
                            let g = k[(local_to_global[a] * dim + c1, local_to_global[b] * dim + c2)];
                            assert!((g - ke[(a * dim + c1, b * dim + c2)]).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn patch_translation_in_null_space() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 5 }, &[2, 2], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let s = assemble(&m).unwrap();
        let n = s.ndof();
        for comp in 0..2 {
            let t: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == comp)).collect();
            let mut y = vec![0.0; n];
            s.matrix().mul_vec(&t, &mut y);
            let scale = s.matrix().to_dense().amax();
            assert!(y.iter().all(|v| v.abs() < 1e-10 * scale));
        }
        assert!((s.matrix().to_dense() - s.matrix().to_dense().transpose()).amax() < 1e-9);
    }

    #[test]
    fn hanging_node_energy_matches_interpolated_field() {
        let g = generate_synthetic(&SyntheticSpec::SphereInclusion { radius: 1.5 }, &[8, 8], 0.1).unwrap();
        let m0 = build_uniform_mesh(&g, &table(), 1).unwrap();
        let (m, _) = adaptive_coarsen(&m0, 1, false).unwrap();
        assert!(!m.hanging_constraints().is_empty());
        let s = assemble(&m).unwrap();
        assert_eq!(s.ndof(), crate::coarsening::count_ndof(&m).0);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let free: Vec<[f64; 3]> = (0..s.expansion().n_free())
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 0.0])
            .collect();
        let u: Vec<f64> = free.iter().flat_map(|v| [v[0], v[1]]).collect();
        let mut ku = vec![0.0; u.len()];
        s.matrix().mul_vec(&u, &mut ku);
        let reduced: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();

        // oracle: interpolate slaves, then sum unconstrained element energies
        let all = s.expansion().prolongate(&free);
        let mut direct = 0.0;
        for el in m.elements() {
            let c = crate::fem::phase_stiffness(2, el.young, el.poisson).unwrap();
            let ke = element_stiffness(
                &ElementGeometry {
                    dim: 2,
                    origin: [0.0; 3],
                    size: m.unit() * el.size_units() as f64,
                },
                &c,
            )
            .unwrap();
            let ue = nalgebra::DVector::from_fn(8, |i, _| all[el.nodes[i / 2] as usize][i % 2]);
            direct += (ue.transpose() * &ke * &ue)[(0, 0)];
        }
        assert!((reduced - direct).abs() <= 1e-12 * direct.abs());
    }
}
