//! Homogenized elasticity tensors from unit load states, Voigt/Reuss
//! bounds, boundary-condition comparisons and isotropy identification.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coarsening::{build_uniform_mesh, count_ndof, Mesh};
use crate::error::{Error, Result};
use crate::fem::{
    assemble, hill_mandel_residual, phase_stiffness, volume_average, voigt_len, BcOperator, BoundaryCondition,
    ElasticityTensor, MacroLoad,
};
use crate::microstructure::{centered_origin, extract_subvolume, PhaseFractions, PhaseTable, VoxelGrid};
use crate::sparse::SolverOptions;

#[derive(Clone, Debug, Serialize)]
pub struct HomogenizationResult {
    pub c: ElasticityTensor,
    pub bc: BoundaryCondition,
    pub case_name: String,
    pub phase_fractions: PhaseFractions,
    pub ndof: usize,
    pub deactivated_ndof: usize,
    /// Relative asymmetry of the raw tensor (of the compliance for SUBC)
    /// before symmetrization.
    pub asymmetry: f64,
    /// Largest Hill-Mandel residual over the load states.
    pub hill_mandel: f64,
}

/// Unit Voigt vector `k` (shear entries are engineering, i.e. `2 eps_ij = 1`).
fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; voigt_len(dim)];
    v[k] = 1.0;
    v
}

pub fn homogenize(mesh: &Mesh, bc: BoundaryCondition) -> Result<HomogenizationResult> {
    homogenize_with(mesh, bc, SolverOptions::default())
}

pub fn homogenize_with(mesh: &Mesh, bc: BoundaryCondition, solver: SolverOptions) -> Result<HomogenizationResult> {
    let system = assemble(mesh)?;
    let op = BcOperator::with_solver(&system, mesh, bc, solver)?;
    homogenize_operator(&op, mesh)
}

/// Runs the unit load states through an already reduced (and factorized)
/// operator, so that further loads can reuse it.
pub fn homogenize_operator(op: &BcOperator, mesh: &Mesh) -> Result<HomogenizationResult> {
    let dim = mesh.dim();
    let nv = voigt_len(dim);
    let bc = op.bc();
    let mut raw = DMatrix::<f64>::zeros(nv, nv);
    let mut hill_mandel = 0.0f64;
    for k in 0..nv {
        let load = match bc {
            BoundaryCondition::Subc => MacroLoad::stress(&unit(dim, k))?,
            _ => MacroLoad::strain(bc, &unit(dim, k))?,
        };
        let sol = op.solve(&load).map_err(|e| match e {
            Error::SolverFailure {
                iterations, residual, ..
            } => Error::SolverFailure {
                iterations,
                residual,
                load_state: Some(k),
            },
            other => other,
        })?;
        let column = match bc {
            BoundaryCondition::Subc => volume_average(mesh, &sol.qp_strain),
            _ => volume_average(mesh, &sol.qp_stress),
        };
        for i in 0..nv {
            raw[(i, k)] = column[i];
        }
        hill_mandel = hill_mandel.max(hill_mandel_residual(&sol, mesh).residual);
    }
    let raw = ElasticityTensor::new(dim, raw)?;
    let asymmetry = raw.asymmetry();
    let sym = raw.symmetrized();
    let c = match bc {
        BoundaryCondition::Subc => ElasticityTensor::new(dim, sym.inverse()?)?.symmetrized(),
        _ => sym,
    };
    let (ndof, deactivated_ndof) = count_ndof(mesh);
    Ok(HomogenizationResult {
        c,
        bc,
        case_name: String::new(),
        phase_fractions: mesh.phase_fractions(),
        ndof,
        deactivated_ndof,
        asymmetry,
        hill_mandel,
    })
}

/// Homogenizes a voxel grid on its uniform one-element-per-voxel mesh.
pub fn homogenize_grid(grid: &VoxelGrid, table: &PhaseTable, bc: BoundaryCondition) -> Result<HomogenizationResult> {
    let mesh = build_uniform_mesh(grid, table, 1)?;
    let mut r = homogenize(&mesh, bc)?;
    r.case_name = grid.provenance.clone();
    Ok(r)
}

/// Volume averages of the element tensors and of their inverses (inverted).
pub fn voigt_reuss_bounds(mesh: &Mesh) -> Result<(ElasticityTensor, ElasticityTensor)> {
    let dim = mesh.dim();
    let nv = voigt_len(dim);
    let mut voigt = DMatrix::<f64>::zeros(nv, nv);
    let mut reuss = DMatrix::<f64>::zeros(nv, nv);
    let vol = mesh.domain_volume();
    for (ei, el) in mesh.elements().iter().enumerate() {
        let w = mesh.element_volume(ei) / vol;
        let c = phase_stiffness(dim, el.young, el.poisson)?;
        voigt += c.voigt() * w;
        reuss += c.inverse()? * w;
    }
    let reuss = ElasticityTensor::new(dim, reuss)?.inverse()?;
    Ok((
        ElasticityTensor::new(dim, voigt)?.symmetrized(),
        ElasticityTensor::new(dim, reuss)?.symmetrized(),
    ))
}

/// Where size-study subvolumes are anchored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubvolumeOrigin {
    #[default]
    Centered,
    Corner,
}

impl SubvolumeOrigin {
    pub fn origin(self, grid: &VoxelGrid, size: usize) -> Vec<usize> {
        match self {
            SubvolumeOrigin::Centered => centered_origin(grid, size),
            SubvolumeOrigin::Corner => vec![0; grid.dim()],
        }
    }
}

/// Voigt positions (1-based) whose deviations are tracked.
pub fn tracked_components(dim: usize) -> Vec<(usize, usize)> {
    if dim == 2 {
        vec![(1, 1), (2, 2), (3, 3), (1, 2)]
    } else {
        vec![(1, 1), (4, 4), (1, 2)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BcComparisonRow {
    pub size: usize,
    pub bc: BoundaryCondition,
    pub values: Vec<f64>,
    /// `100 (C_ij - C_ij_ref) / C_ij_ref` per tracked component.
    pub deviation_percent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BcComparison {
    pub reference: (BoundaryCondition, usize),
    pub components: Vec<(usize, usize)>,
    pub rows: Vec<BcComparisonRow>,
}

impl BcComparison {
    /// Builds the table from finished runs `(size, result)`.
    pub fn from_results(results: &[(usize, HomogenizationResult)], reference: (BoundaryCondition, usize)) -> Result<Self> {
        let Some((_, reference_run)) = results
            .iter()
            .find(|(s, r)| *s == reference.1 && r.bc == reference.0)
        else {
            return Err(Error::InvalidArgument(format!(
                "no run for the reference {} at size {}",
                reference.0, reference.1
            )));
        };
        let dim = reference_run.c.dim();
        let components = tracked_components(dim);
        let ref_values: Vec<f64> = components.iter().map(|&(i, j)| reference_run.c.c(i, j)).collect();
        let rows = results
            .iter()
            .map(|(size, r)| {
                let values: Vec<f64> = components.iter().map(|&(i, j)| r.c.c(i, j)).collect();
                let deviation_percent = values
                    .iter()
                    .zip(&ref_values)
                    .map(|(v, rv)| 100.0 * (v - rv) / rv)
                    .collect();
                BcComparisonRow {
                    size: *size,
                    bc: r.bc,
                    values,
                    deviation_percent,
                }
            })
            .collect();
        Ok(BcComparison {
            reference,
            components,
            rows,
        })
    }

    pub fn row(&self, size: usize, bc: BoundaryCondition) -> Option<&BcComparisonRow> {
        self.rows.iter().find(|r| r.size == size && r.bc == bc)
    }
}

/// Homogenizes cubic/square subvolumes of `grid` for every size and BC and
/// reports deviations from the reference run.
pub fn bc_comparison(
    grid: &VoxelGrid,
    table: &PhaseTable,
    sizes: &[usize],
    bcs: &[BoundaryCondition],
    reference: (BoundaryCondition, usize),
    origin: SubvolumeOrigin,
) -> Result<BcComparison> {
    if !sizes.contains(&reference.1) || !bcs.contains(&reference.0) {
        return Err(Error::InvalidArgument(format!(
            "reference {} at size {} is not among the runs",
            reference.0, reference.1
        )));
    }
    let mut results = Vec::new();
    for &size in sizes {
        let o = origin.origin(grid, size);
        let sub = extract_subvolume(grid, &o, size)?;
        for &bc in bcs {
            results.push((size, homogenize_grid(&sub, table, bc)?));
        }
    }
    BcComparison::from_results(&results, reference)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsotropyCheck {
    pub name: String,
    /// Non-negative relative deviation (a fraction, not a percentage).
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsotropyReport {
    pub young: f64,
    pub poisson: f64,
    pub shear: f64,
    pub deviations: Vec<IsotropyCheck>,
    /// Set when the identified Poisson ratio lies outside (-1, 0.5).
    pub nonphysical: bool,
}

impl IsotropyReport {
    pub fn deviation(&self, name: &str) -> Option<f64> {
        self.deviations.iter().find(|d| d.name == name).map(|d| d.value)
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().map(|d| d.value).fold(0.0, f64::max)
    }
}

fn check(name: &str, value: f64) -> IsotropyCheck {
    IsotropyCheck {
        name: name.to_string(),
        value: value.abs(),
    }
}

/// Plane-strain identification from `S11 = (1 - nu^2)/E`, `S12 = -nu(1 + nu)/E`.
pub fn identify_isotropy_2d(c: &ElasticityTensor) -> Result<IsotropyReport> {
    if c.dim() != 2 {
        return Err(Error::InvalidArgument("2d identification needs a 3x3 tensor".into()));
    }
    let s = c.inverse()?;
    let r = s[(0, 1)] / s[(0, 0)];
    let poisson = -r / (1.0 - r);
    let young = (1.0 - poisson * poisson) / s[(0, 0)];
    let shear = young / (2.0 * (1.0 + poisson));
    let c11 = c.c(1, 1);
    let deviations = vec![
        check("C11-C22/C11", (c11 - c.c(2, 2)) / c11),
        check("C33-G/G", (c.c(3, 3) - shear) / shear),
        check("C13/C11", c.c(1, 3) / c11),
        check("C23/C11", c.c(2, 3) / c11),
    ];
    Ok(IsotropyReport {
        young,
        poisson,
        shear,
        deviations,
        nonphysical: !(poisson > -1.0 && poisson < 0.5),
    })
}

/// Identification from `E = 1/S11`, `nu = -S12 E`.
pub fn identify_isotropy_3d(c: &ElasticityTensor) -> Result<IsotropyReport> {
    if c.dim() != 3 {
        return Err(Error::InvalidArgument("3d identification needs a 6x6 tensor".into()));
    }
    let s = c.inverse()?;
    let young = 1.0 / s[(0, 0)];
    let poisson = -s[(0, 1)] * young;
    let shear = young / (2.0 * (1.0 + poisson));
    let c11 = c.c(1, 1);
    let deviations = vec![
        check("C11-C22/C11", (c11 - c.c(2, 2)) / c11),
        check("C11-C33/C11", (c11 - c.c(3, 3)) / c11),
        check("C44-G/G", (c.c(4, 4) - shear) / shear),
        check("C55-G/G", (c.c(5, 5) - shear) / shear),
        check("C66-G/G", (c.c(6, 6) - shear) / shear),
        check("C14/C11", c.c(1, 4) / c11),
        check("C24/C11", c.c(2, 4) / c11),
        check("C34/C11", c.c(3, 4) / c11),
    ];
    Ok(IsotropyReport {
        young,
        poisson,
        shear,
        deviations,
        nonphysical: !(poisson > -1.0 && poisson < 0.5),
    })
}

pub fn identify_isotropy(c: &ElasticityTensor) -> Result<IsotropyReport> {
    match c.dim() {
        2 => identify_isotropy_2d(c),
        _ => identify_isotropy_3d(c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{generate_synthetic, Axis, PhaseId, SyntheticSpec};

    fn table() -> PhaseTable {
        PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.3)]).unwrap()
    }

    fn close(a: &ElasticityTensor, b: &ElasticityTensor, tol: f64) -> bool {
        (a.voigt() - b.voigt()).amax() <= tol * b.voigt().amax()
    }

    #[test]
    fn homogeneous_medium_returns_phase_tensor() {
        for dim in [2usize, 3] {
            let n = if dim == 2 { 6 } else { 3 };
            let g = VoxelGrid::uniform(&vec![n; dim], 0.1, PhaseId(1)).unwrap();
            let want = phase_stiffness(dim, 20_000.0, 0.3).unwrap();
            for bc in BoundaryCondition::ALL {
                let r = homogenize_grid(&g, &table(), bc).unwrap();
                assert!(close(&r.c, &want, 1e-8), "{bc} {dim}d");
                assert!(r.asymmetry < 1e-8);
                assert!(r.hill_mandel < 1e-8);
            }
        }
    }

    /// Layered medium with normal `axis`: strains tangential to the layers and
    /// stresses on the layer planes are uniform. Hand-assembled by splitting
    /// the Voigt indices into the two sets and averaging the partial inverses.
    fn laminate_oracle(dim: usize, axis: usize, phases: &[(f64, f64, f64)]) -> DMatrix<f64> {
        let nv = voigt_len(dim);
        let normal: Vec<usize> = if dim == 2 {
            vec![axis, 2]
        } else {
            let shears = [(3, [0, 1]), (4, [1, 2]), (5, [0, 2])];
            let mut v = vec![axis];
            v.extend(shears.iter().filter(|(_, p)| p.contains(&axis)).map(|(s, _)| *s));
            v
        };
        let tangential: Vec<usize> = (0..nv).filter(|i| !normal.contains(i)).collect();
        let (nn, nt) = (normal.len(), tangential.len());
        let pick = |m: &DMatrix<f64>, r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| m[(r[i], c[j])]);
        let mut a = DMatrix::zeros(nn, nn);
        let mut b = DMatrix::zeros(nn, nt);
        let mut d = DMatrix::zeros(nt, nn);
        let mut e = DMatrix::zeros(nt, nt);
        for &(f, young, nu) in phases {
            let c = phase_stiffness(dim, young, nu).unwrap().voigt().clone();
            let cnn_inv = pick(&c, &normal, &normal).try_inverse().unwrap();
            let cnt = pick(&c, &normal, &tangential);
            let ctn = pick(&c, &tangential, &normal);
            let ctt = pick(&c, &tangential, &tangential);
            a += &cnn_inv * f;
            b += &cnn_inv * &cnt * f;
            d += &ctn * &cnn_inv * f;
            e += (&ctt - &ctn * &cnn_inv * &cnt) * f;
        }
        // sigma_N = A^-1 (eps_N + B eps_T), sigma_T = D sigma_N + E eps_T
        let a_inv = a.try_inverse().unwrap();
        let snn = a_inv.clone();
        let snt = &a_inv * &b;
        let stn = &d * &snn;
        let stt = &d * &snt + &e;
        let mut c = DMatrix::zeros(nv, nv);
        for (i, &r) in normal.iter().enumerate() {
            for (j, &s) in normal.iter().enumerate() {
                c[(r, s)] = snn[(i, j)];
            }
            for (j, &s) in tangential.iter().enumerate() {
                c[(r, s)] = snt[(i, j)];
            }
        }
        for (i, &r) in tangential.iter().enumerate() {
            for (j, &s) in normal.iter().enumerate() {
                c[(r, s)] = stn[(i, j)];
            }
            for (j, &s) in tangential.iter().enumerate() {
                c[(r, s)] = stt[(i, j)];
            }
        }
        c
    }

    #[test]
    fn laminate_matches_closed_form() {
        for (dim, ext, axis) in [(2usize, vec![8usize, 8], Axis::X), (2, vec![8, 8], Axis::Y), (3, vec![4, 4, 4], Axis::Z)] {
            let g = generate_synthetic(
                &SyntheticSpec::Laminate {
                    axis,
                    fraction: 0.5,
                    periods: 1,
                },
                &ext,
                0.1,
            )
            .unwrap();
            let r = homogenize_grid(&g, &table(), BoundaryCondition::Pbc).unwrap();
            let want = laminate_oracle(dim, axis.index(), &[(0.5, 50_000.0, 0.3), (0.5, 20_000.0, 0.3)]);
            let err = (r.c.voigt() - &want).amax() / want.amax();
            assert!(err <= 1e-7, "{dim}d {axis:?}: {err}");
        }
    }

    #[test]
    fn bounds_and_bc_ordering() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 12 }, &[6, 6, 6], 0.1).unwrap();
        let m = build_uniform_mesh(&g, &table(), 1).unwrap();
        let (v, rs) = voigt_reuss_bounds(&m).unwrap();
        let k = homogenize(&m, BoundaryCondition::Kubc).unwrap().c;
        let p = homogenize(&m, BoundaryCondition::Pbc).unwrap().c;
        let s = homogenize(&m, BoundaryCondition::Subc).unwrap().c;
        let tol = -1e-8 * p.norm();
        for (hi, lo) in [(&v, &k), (&k, &p), (&p, &s), (&s, &rs)] {
            let diff = ElasticityTensor::new(3, hi.voigt() - lo.voigt()).unwrap();
            assert!(diff.eigenvalues().iter().all(|&e| e >= tol));
        }
    }

    #[test]
    fn comparison_of_reference_with_itself_is_zero() {
        let g = generate_synthetic(&SyntheticSpec::Random { p: 0.5, seed: 3 }, &[8, 8], 0.1).unwrap();
        let cmp = bc_comparison(
            &g,
            &table(),
            &[4, 8],
            &BoundaryCondition::ALL,
            (BoundaryCondition::Pbc, 8),
            SubvolumeOrigin::Centered,
        )
        .unwrap();
        assert_eq!(cmp.components.len(), 4);
        assert!(cmp.row(8, BoundaryCondition::Pbc).unwrap().deviation_percent.iter().all(|&d| d == 0.0));
        assert_eq!(cmp.rows.len(), 6);
        assert!(bc_comparison(&g, &table(), &[4], &BoundaryCondition::ALL, (BoundaryCondition::Pbc, 8), SubvolumeOrigin::Corner).is_err());
    }

    #[test]
    fn isotropy_round_trips() {
        let c = phase_stiffness(2, 32111.77, 0.203).unwrap();
        let r = identify_isotropy_2d(&c).unwrap();
        assert!((r.young - 32111.77).abs() <= 1e-10 * 32111.77);
        assert!((r.poisson - 0.203).abs() <= 1e-10);
        assert!(r.max_deviation() < 1e-12);
        assert_eq!(r.shear, r.young / (2.0 * (1.0 + r.poisson)));
        let c = phase_stiffness(3, 32374.7, 0.29).unwrap();
        let r = identify_isotropy_3d(&c).unwrap();
        assert!((r.young - 32374.7).abs() <= 1e-10 * 32374.7);
        assert!((r.poisson - 0.29).abs() <= 1e-10);
        assert!(r.max_deviation() < 1e-12);
        assert!(!r.nonphysical);
    }

    #[test]
    fn isotropy_perturbations() {
        let mut m = phase_stiffness(2, 30_000.0, 0.25).unwrap().voigt().clone();
        m[(0, 0)] *= 1.01;
        let r = identify_isotropy_2d(&ElasticityTensor::new(2, m).unwrap()).unwrap();
        assert!((r.deviation("C11-C22/C11").unwrap() - 0.01 / 1.01).abs() < 1e-12);
        assert_eq!(r.deviation("C13/C11"), Some(0.0));
        assert_eq!(r.deviation("C23/C11"), Some(0.0));

        let base = phase_stiffness(3, 30_000.0, 0.25).unwrap();
        let g = 30_000.0 / 2.5;
        let mut m = base.voigt().clone();
        for i in 3..6 {
            m[(i, i)] = 1.2 * g;
        }
        let r = identify_isotropy_3d(&ElasticityTensor::new(3, m).unwrap()).unwrap();
        for name in ["C44-G/G", "C55-G/G", "C66-G/G"] {
            assert!((r.deviation(name).unwrap() - 0.2).abs() < 1e-12, "{name}");
        }
        for name in ["C14/C11", "C24/C11", "C34/C11"] {
            assert_eq!(r.deviation(name), Some(0.0));
        }
    }
}
