//! Case preparation, the sweep driver and table emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::case::CaseName;
use super::config::{CoarseningRule, ErrorStage, SweepConfig};
use crate::coarsening::{
    adaptive_coarsen, build_uniform_mesh, coarsen_resolution_majority, coarsen_resolution_mixture, count_ndof,
    CoarseningReport, Mesh,
};
use crate::error::{Error, Result};
use crate::errors::{error_report, ErrorReport};
use crate::fem::{assemble, voigt_len, BcOperator, BoundaryCondition, MacroLoad, MicroSolution};
use crate::homog::{homogenize_operator, tracked_components, HomogenizationResult};
use crate::microstructure::{extract_subvolume, phase_fractions, PhaseFractions, PhaseId, PhaseTable, VoxelGrid};
use crate::vtk::{cell_average, write_vtk, VtkFields};

/// Grid, table and mesh of one case after the S, R and D transforms.
pub struct PreparedCase {
    pub name: CaseName,
    pub grid: VoxelGrid,
    pub table: PhaseTable,
    pub subdivision: usize,
    pub mesh: Mesh,
    pub coarsening: CoarseningReport,
}

pub fn prepare_case(
    cfg: &SweepConfig,
    grid: &VoxelGrid,
    table: &PhaseTable,
    name: CaseName,
    preserve_boundary: bool,
) -> Result<PreparedCase> {
    let (halvings, subdivision) = name.plan()?;
    let origin = cfg.study.origin.origin(grid, name.size);
    let mut g = extract_subvolume(grid, &origin, name.size)?;
    let mut t = table.clone();
    let original = phase_fractions(&g);
    for _ in 0..halvings {
        g = match cfg.study.rule {
            CoarseningRule::Mixture => {
                let (ng, nt) = coarsen_resolution_mixture(&g, &t)?;
                t = nt;
                ng
            }
            CoarseningRule::Majority => coarsen_resolution_majority(&g, &original)?,
        };
    }
    let uniform = build_uniform_mesh(&g, &t, subdivision)?;
    let (mesh, coarsening) = adaptive_coarsen(&uniform, name.adaptive_steps as i32, preserve_boundary)?;
    Ok(PreparedCase {
        name,
        grid: g,
        table: t,
        subdivision,
        mesh,
        coarsening,
    })
}

/// Scalar summary of the error stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseErrors {
    pub solution_norm: f64,
    pub e_mic: Option<f64>,
    pub e_bar_mic: f64,
    pub theta: Option<f64>,
}

impl From<&ErrorReport> for CaseErrors {
    fn from(r: &ErrorReport) -> Self {
        CaseErrors {
            solution_norm: r.solution_norm,
            e_mic: r.e_mic,
            e_bar_mic: r.e_bar_mic,
            theta: r.theta,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseRecord {
    pub case: String,
    pub bc: BoundaryCondition,
    /// `ok`, `over-budget` or `failed: <reason>`.
    pub status: String,
    pub ndof: usize,
    pub deactivated_ndof: usize,
    pub reduction_factor: f64,
    pub phase_fractions: PhaseFractions,
    pub homogenization: Option<HomogenizationResult>,
    pub errors: Option<CaseErrors>,
    /// Percent deviation of the tracked components from the reference case.
    pub deviation_percent: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

/// Output of one case and BC, with the error-stage fields kept for export.
pub struct CaseOutcome {
    pub homogenization: HomogenizationResult,
    pub solution: Option<MicroSolution>,
    pub report: Option<ErrorReport>,
}

/// Macro load of the error stage: the configured strain, or the first unit
/// state. SUBC is driven by the stress the homogenized tensor associates
/// with that strain.
pub fn error_load(cfg: &SweepConfig, bc: BoundaryCondition, c: &HomogenizationResult) -> Result<MacroLoad> {
    let dim = c.c.dim();
    let strain = cfg.load.strain.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; voigt_len(dim)];
        v[0] = 1.0;
        v
    });
    match bc {
        BoundaryCondition::Subc => {
            let s = c.c.voigt() * nalgebra::DVector::from_column_slice(&strain);
            MacroLoad::stress(s.as_slice())
        }
        _ => MacroLoad::strain(bc, &strain),
    }
}

fn reference_ndof(p: &PreparedCase, factor: usize) -> usize {
    let dim = p.grid.dim();
    let n: usize = p.grid.extents().iter().map(|e| e * p.subdivision * factor + 1).product();
    dim * n
}

pub fn run_case(cfg: &SweepConfig, p: &PreparedCase, bc: BoundaryCondition, stage: ErrorStage) -> Result<CaseOutcome> {
    let system = assemble(&p.mesh)?;
    let op = BcOperator::new(&system, &p.mesh, bc)?;
    let mut homogenization = homogenize_operator(&op, &p.mesh)?;
    homogenization.case_name = p.name.to_string();
    if stage == ErrorStage::Off {
        return Ok(CaseOutcome {
            homogenization,
            solution: None,
            report: None,
        });
    }
    let load = error_load(cfg, bc, &homogenization)?;
    let sol = op.solve(&load)?;
    drop(op);
    let report = if stage == ErrorStage::Actual {
        let ref_mesh = build_uniform_mesh(&p.grid, &p.table, p.subdivision * cfg.errors.ref_factor)?;
        let ref_system = assemble(&ref_mesh)?;
        let ref_op = BcOperator::new(&ref_system, &ref_mesh, bc)?;
        let ref_sol = ref_op.solve(&load)?;
        error_report(&p.mesh, &sol, Some((&ref_mesh, &ref_sol)))?
    } else {
        error_report(&p.mesh, &sol, None)?
    };
    Ok(CaseOutcome {
        homogenization,
        solution: Some(sol),
        report: Some(report),
    })
}

pub fn write_case_vtk(path: &Path, p: &PreparedCase, out: &CaseOutcome) -> Result<()> {
    let mut fields = VtkFields::default();
    if let Some(sol) = &out.solution {
        fields.displacement = Some(&sol.displacements);
        fields.cell_voigt.push(("stress", cell_average(&p.mesh, &sol.qp_stress)));
        fields.cell_voigt.push(("strain", cell_average(&p.mesh, &sol.qp_strain)));
    }
    if let Some(r) = &out.report {
        fields.cell_scalars.push(("relative_error_estimated", r.relative_estimated.clone()));
        if let Some(a) = &r.relative_actual {
            fields.cell_scalars.push(("relative_error_actual", a.clone()));
        }
    }
    write_vtk(path, &p.mesh, &fields)
}

fn failed(case: &CaseName, bc: BoundaryCondition, status: String) -> CaseRecord {
    CaseRecord {
        case: case.to_string(),
        bc,
        status,
        ndof: 0,
        deactivated_ndof: 0,
        reduction_factor: f64::NAN,
        phase_fractions: PhaseFractions::default(),
        homogenization: None,
        errors: None,
        deviation_percent: None,
        seconds: None,
    }
}

fn sweep_case(cfg: &SweepConfig, grid: &VoxelGrid, table: &PhaseTable, name: CaseName) -> Vec<CaseRecord> {
    let mut prepared: Vec<(bool, Result<PreparedCase>, f64)> = Vec::new();
    cfg.study
        .bcs
        .iter()
        .map(|&bc| {
            let flag = cfg.preserve_boundary(bc);
            if !prepared.iter().any(|(f, _, _)| *f == flag) {
                let start = Instant::now();
                let p = prepare_case(cfg, grid, table, name, flag);
                prepared.push((flag, p, start.elapsed().as_secs_f64()));
            }
            let (_, p, prep_seconds) = prepared.iter().find(|(f, _, _)| *f == flag).unwrap();
            let p = match p {
                Ok(p) => p,
                Err(e) => return failed(&name, bc, format!("failed: {e}")),
            };
            let t0 = Instant::now();
            let (ndof, deactivated_ndof) = count_ndof(&p.mesh);
            let mut rec = CaseRecord {
                case: name.to_string(),
                bc,
                status: "ok".into(),
                ndof,
                deactivated_ndof,
                reduction_factor: p.coarsening.reduction_factor,
                phase_fractions: p.mesh.phase_fractions(),
                homogenization: None,
                errors: None,
                deviation_percent: None,
                seconds: None,
            };
            let over = ndof > cfg.study.dof_ceiling
                || (cfg.errors.stage == ErrorStage::Actual
                    && reference_ndof(p, cfg.errors.ref_factor) > cfg.study.dof_ceiling);
            if over {
                rec.status = "over-budget".into();
                return rec;
            }
            match run_case(cfg, p, bc, cfg.errors.stage) {
                Ok(out) => {
                    if cfg.output.vtk {
                        let path = cfg.resolve(&cfg.output.dir).join(format!("{name}_{}.vtk", bc.label()));
                        if let Err(e) = write_case_vtk(&path, p, &out) {
                            rec.status = format!("failed: {e}");
                        }
                    }
                    rec.errors = out.report.as_ref().map(CaseErrors::from);
                    rec.homogenization = Some(out.homogenization);
                }
                Err(e) => rec.status = format!("failed: {e}"),
            }
            if cfg.output.timing {
                rec.seconds = Some(prep_seconds + t0.elapsed().as_secs_f64());
            }
            rec
        })
        .collect()
}

/// Stack size of solver threads; the dense kernels of the factorization
/// recurse with large frames.
pub const WORKER_STACK_BYTES: usize = 64 << 20;

pub fn worker_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .stack_size(WORKER_STACK_BYTES)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker threads: {e}")))
}

/// Runs every case of the study for every configured BC. Records are
/// ordered by case, then BC, independent of the scheduling of the workers.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<CaseRecord>> {
    let table = cfg.phase_table()?;
    let grid = cfg.load_grid(&table)?;
    if cfg.output.vtk {
        let dir = cfg.resolve(&cfg.output.dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let cases = cfg.cases();
    let pool = worker_pool(rayon::current_num_threads())?;
    let mut records: Vec<CaseRecord> = pool
        .install(|| {
            cases
                .par_iter()
                .map(|&name| sweep_case(cfg, &grid, &table, name))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    if let Some(r) = &cfg.reference {
        let name: CaseName = r.case.parse()?;
        let reference = records
            .iter()
            .find(|x| x.case == name.to_string() && x.bc == r.bc)
            .and_then(|x| x.homogenization.as_ref())
            .map(|h| h.c.clone());
        if let Some(c_ref) = reference {
            let comps = tracked_components(cfg.dim());
            for rec in &mut records {
                if let Some(h) = &rec.homogenization {
                    rec.deviation_percent = Some(
                        comps
                            .iter()
                            .map(|&(i, j)| 100.0 * (h.c.c(i, j) - c_ref.c(i, j)) / c_ref.c(i, j))
                            .collect(),
                    );
                }
            }
        }
    }
    Ok(records)
}

/// `%.6g`-style formatting: 6 significant digits, trailing zeros trimmed.
pub fn format_g6(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..6).contains(&exp) {
        trim(format!("{x:.*}", (5 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mant.to_string()))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_g6).unwrap_or_default()
}

/// CSV text of the records (header plus one row per record).
pub fn render_csv(records: &[CaseRecord], dim: usize, timing: bool) -> String {
    let nv = voigt_len(dim);
    let comps = tracked_components(dim);
    let phases: BTreeSet<PhaseId> = records.iter().flat_map(|r| r.phase_fractions.0.keys().copied()).collect();
    let mut header: Vec<String> = ["case", "bc", "status", "ndof", "deactivated_ndof", "reduction_factor"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 1..=nv {
        for j in i..=nv {
            header.push(format!("C{i}{j}"));
        }
    }
    for (i, j) in &comps {
        header.push(format!("dev_C{i}{j}"));
    }
    header.extend(["e_mic", "e_bar_mic", "theta"].map(String::from));
    for p in &phases {
        header.push(format!("fraction_{p}"));
    }
    if timing {
        header.push("seconds".into());
    }
    let mut s = header.join(",");
    s.push('\n');
    for r in records {
        let mut row = vec![
            r.case.clone(),
            r.bc.label().to_string(),
            r.status.replace(',', ";"),
            r.ndof.to_string(),
            r.deactivated_ndof.to_string(),
            format_g6(r.reduction_factor),
        ];
        for i in 1..=nv {
            for j in i..=nv {
                row.push(opt(r.homogenization.as_ref().map(|h| h.c.c(i, j))));
            }
        }
        for k in 0..comps.len() {
            row.push(opt(r.deviation_percent.as_ref().map(|d| d[k])));
        }
        row.push(opt(r.errors.as_ref().and_then(|e| e.e_mic)));
        row.push(opt(r.errors.as_ref().map(|e| e.e_bar_mic)));
        row.push(opt(r.errors.as_ref().and_then(|e| e.theta)));
        for p in &phases {
            row.push(opt(r.phase_fractions.0.get(p).copied()));
        }
        if timing {
            row.push(opt(r.seconds));
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

/// Writes `cases.csv` and `cases.json` into `dir`.
pub fn emit_tables(records: &[CaseRecord], dim: usize, timing: bool, dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to emit".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("cases.csv");
    fs::write(&csv, render_csv(records, dim, timing)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join("cases.json");
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(vec![csv, json])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(format_g6(32111.77), "32111.8");
        assert_eq!(format_g6(0.203), "0.203");
        assert_eq!(format_g6(1.0), "1");
        assert_eq!(format_g6(-2.5e-7), "-2.5e-7");
        assert_eq!(format_g6(1234567.0), "1.23457e6");
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(f64::NAN), "");
    }

    fn config(extra: &str) -> SweepConfig {
        SweepConfig::from_toml(&format!(
            r#"
[input]
extents = [8, 8]
synthetic = {{ generator = "checkerboard", cell = 2 }}
[phases]
entries = [
  {{ id = 0, kind = "solid", young = 30000.0, poisson = 0.2 }},
  {{ id = 1, kind = "solid", young = 30000.0, poisson = 0.2 }},
]
{extra}
"#
        ))
        .unwrap()
    }

    #[test]
    fn single_phase_case_gives_phase_tensor_and_no_error() {
        let cfg = config("[study]\nsizes = [8]\nbcs = [\"pbc\"]\n[errors]\nstage = \"estimate\"\n");
        let recs = run_sweep(&cfg).unwrap();
        assert_eq!(recs.len(), 1);
        let h = recs[0].homogenization.as_ref().unwrap();
        let c = crate::fem::phase_stiffness(2, 30000.0, 0.2).unwrap();
        assert!((h.c.voigt() - c.voigt()).norm() <= 1e-8 * c.norm());
        assert!(recs[0].errors.as_ref().unwrap().e_bar_mic <= 1e-8 * recs[0].errors.as_ref().unwrap().solution_norm);
        let csv = render_csv(&recs, 2, false);
        assert_eq!(csv.lines().count(), 2);
        // no actual error stage: empty fields
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn counts_rows_and_reference_deviation() {
        let cfg = config("[study]\nsizes = [4, 8]\n[reference]\ncase = \"SRD8\"\nbc = \"pbc\"\n");
        let recs = run_sweep(&cfg).unwrap();
        assert_eq!(recs.len(), 6);
        let r = recs.iter().find(|r| r.case == "S8-R8-D8" && r.bc == BoundaryCondition::Pbc).unwrap();
        assert!(r.deviation_percent.as_ref().unwrap().iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn over_budget_cases_are_skipped() {
        let cfg = config("[study]\nsizes = [8]\nbcs = [\"kubc\"]\ndof_ceiling = 10\n");
        let recs = run_sweep(&cfg).unwrap();
        assert_eq!(recs[0].status, "over-budget");
        assert!(recs[0].homogenization.is_none());
    }
}
