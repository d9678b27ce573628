//! Property tests of the pipeline invariants.

use nalgebra::SymmetricEigen;
use proptest::prelude::*;

use voxhom::cli::{parse_case_name, CaseName};
use voxhom::coarsening::{
    adaptive_coarsen, build_uniform_mesh, coarsen_resolution_majority, coarsen_resolution_mixture, count_ndof,
};
use voxhom::errors::{estimated_error, recover_stresses, relative_error_field};
use voxhom::fem::{assemble, solve_micro, BoundaryCondition, MacroLoad};
use voxhom::homog::homogenize;
use voxhom::microstructure::{phase_fractions, PhaseId, PhaseTable, VoxelGrid};

fn grid_2d(n: usize, phases: u32) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(0..phases, n * n)
        .prop_map(move |ids| VoxelGrid::new(&[n, n], 0.1, ids.into_iter().map(PhaseId).collect()).unwrap())
}

fn grid_3d(n: usize, phases: u32) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(0..phases, n * n * n)
        .prop_map(move |ids| VoxelGrid::new(&[n, n, n], 0.1, ids.into_iter().map(PhaseId).collect()).unwrap())
}

fn table() -> PhaseTable {
    PhaseTable::solids(&[(0, 50_000.0, 0.3), (1, 20_000.0, 0.25), (2, 8_000.0, 0.2)]).unwrap()
}

fn min_eig(m: nalgebra::DMatrix<f64>) -> f64 {
    SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn case_names_round_trip(s in 1usize..100_000, r in 1usize..100_000, d in 1usize..100_000, n in 0u32..20) {
        let c = CaseName::new(s, r, d, n);
        prop_assert_eq!(parse_case_name(&c.to_string()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixture_rule_preserves_mean_moduli(g in grid_2d(8, 3)) {
        let t = table();
        let mean = |g: &VoxelGrid, t: &PhaseTable, k: usize| {
            g.data().iter().map(|&p| { let (e, nu) = t.effective(p).unwrap(); [e, nu][k] }).sum::<f64>() / g.len() as f64
        };
        let (g1, t1) = coarsen_resolution_mixture(&g, &t).unwrap();
        let (g2, t2) = coarsen_resolution_mixture(&g1, &t1).unwrap();
        for k in 0..2 {
            let before = mean(&g, &t, k);
            prop_assert!((mean(&g2, &t2, k) - before).abs() <= 1e-12 * before);
        }
    }

    #[test]
    fn majority_rule_keeps_phase_set_and_picks_modal_phases(g in grid_3d(4, 3)) {
        let original = phase_fractions(&g);
        let c = coarsen_resolution_majority(&g, &original).unwrap();
        prop_assert!(c.phase_ids().is_subset(&g.phase_ids()));
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let mut votes = [0usize; 3];
                    for d in 0..8 {
                        votes[g.at(2 * x + (d & 1), 2 * y + ((d >> 1) & 1), 2 * z + (d >> 2)).0 as usize] += 1;
                    }
                    let top = *votes.iter().max().unwrap();
                    prop_assert_eq!(votes[c.at(x, y, z).0 as usize], top);
                }
            }
        }
    }

    #[test]
    fn adaptive_coarsening_keeps_fractions_and_never_grows(g in grid_2d(16, 2), steps in 0i32..4, keep in any::<bool>()) {
        let mesh = build_uniform_mesh(&g, &table(), 1).unwrap();
        let (coarse, report) = adaptive_coarsen(&mesh, steps, keep).unwrap();
        prop_assert!(coarse.validate().is_ok());
        prop_assert_eq!(coarse.phase_fractions(), mesh.phase_fractions());
        prop_assert!(report.ndof_after <= report.ndof_before);
        prop_assert_eq!(count_ndof(&coarse).0, report.ndof_after);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_scales_linearly_with_moduli(g in grid_2d(6, 3), lambda in 0.1f64..10.0, bc_i in 0usize..3) {
        let bc = BoundaryCondition::ALL[bc_i];
        let t = table();
        let c1 = homogenize(&build_uniform_mesh(&g, &t, 1).unwrap(), bc).unwrap().c;
        let c2 = homogenize(&build_uniform_mesh(&g, &t.scaled(lambda), 1).unwrap(), bc).unwrap().c;
        prop_assert!((c2.voigt() - c1.voigt() * lambda).norm() <= 1e-9 * c2.norm());
    }

    #[test]
    fn boundary_conditions_are_ordered(g in grid_2d(6, 3)) {
        let mesh = build_uniform_mesh(&g, &table(), 1).unwrap();
        let c: Vec<_> = BoundaryCondition::ALL.iter().map(|&bc| homogenize(&mesh, bc).unwrap()).collect();
        let norm = c[1].c.norm();
        prop_assert!(min_eig(c[0].c.voigt() - c[1].c.voigt()) >= -1e-8 * norm);
        prop_assert!(min_eig(c[1].c.voigt() - c[2].c.voigt()) >= -1e-8 * norm);
        for r in &c {
            prop_assert!(min_eig(r.c.voigt().clone()) > 0.0);
            prop_assert!(r.hill_mandel < 1e-8);
        }
    }

    #[test]
    fn error_estimate_is_linear_in_the_load(g in grid_2d(8, 2), scale in 0.01f64..100.0) {
        let mesh = build_uniform_mesh(&g, &table(), 1).unwrap();
        let system = assemble(&mesh).unwrap();
        let eps = [1e-3, -4e-4, 2e-4];
        let s1 = solve_micro(&system, &mesh, &MacroLoad::strain(BoundaryCondition::Kubc, &eps).unwrap()).unwrap();
        let scaled: Vec<f64> = eps.iter().map(|e| e * scale).collect();
        let s2 = solve_micro(&system, &mesh, &MacroLoad::strain(BoundaryCondition::Kubc, &scaled).unwrap()).unwrap();
        let e1 = estimated_error(&mesh, &s1, &recover_stresses(&mesh, &s1));
        let e2 = estimated_error(&mesh, &s2, &recover_stresses(&mesh, &s2));
        prop_assert!((e2.total - scale * e1.total).abs() <= 1e-9 * e2.total.max(1e-300));
        let r1 = relative_error_field(&e1.per_element, &mesh, &s1);
        let r2 = relative_error_field(&e2.per_element, &mesh, &s2);
        for (a, b) in r1.iter().zip(&r2) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-8 * a.abs() + 1e-12, "{} vs {}", a, b),
                (None, None) => {}
                _ => prop_assert!(false, "undefined entries differ"),
            }
        }
    }

    #[test]
    fn exact_piecewise_affine_fields_have_no_estimated_error(
        cut in 1usize..8,
        eps in prop::array::uniform3(-1e-3f64..1e-3),
    ) {
        let g = VoxelGrid::from_fn(&[8, 8], 0.1, |x, _, _| PhaseId(u32::from(x >= cut))).unwrap();
        let mesh = build_uniform_mesh(&g, &table(), 1).unwrap();
        let system = assemble(&mesh).unwrap();
        let sol = solve_micro(&system, &mesh, &MacroLoad::strain(BoundaryCondition::Pbc, &eps).unwrap()).unwrap();
        let est = estimated_error(&mesh, &sol, &recover_stresses(&mesh, &sol));
        let norm = voxhom::fem::energy_norm(&sol, &mesh);
        prop_assert!(est.total <= 1e-7 * norm.max(1e-300), "{} vs {}", est.total, norm);
    }
}
