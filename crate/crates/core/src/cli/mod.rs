//! Batch driver: case names, configuration, sweeps and the subcommands of
//! the `voxhom` binary.

pub mod case;
pub mod config;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use case::{parse_case_name, CaseName};
pub use config::{CoarseningRule, ErrorStage, SweepConfig};
pub use sweep::{
    emit_tables, error_load, format_g6, prepare_case, render_csv, run_case, run_sweep, CaseErrors, CaseOutcome,
    CaseRecord, PreparedCase,
};

use crate::coarsening::count_ndof;
use crate::error::{Error, Result};
use crate::fem::{BoundaryCondition, ElasticityTensor};
use crate::homog::identify_isotropy;
use crate::microstructure::phase_fractions;
use crate::vtk::{write_vtk, VtkFields};

#[derive(Debug, Parser)]
#[command(name = "voxhom", version, about = "Voxel-image homogenization of multiphase elastic microstructures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed of a synthetic input.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid statistics, phase fractions and the cases of a study.
    Info(CaseArgs),
    /// Applies the R and D transforms of a case and exports the mesh.
    Coarsen(CaseArgs),
    /// Homogenizes one case.
    Homogenize(CaseArgs),
    /// Estimated and actual discretization errors of one case.
    Errors(CaseArgs),
    /// Runs the full study of a configuration.
    Sweep(CaseArgs),
    /// Isotropy identification of a stored tensor (JSON).
    Isotropy {
        /// A tensor `{dim, voigt}`, a homogenization result or a sweep's cases.json.
        tensor: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CaseArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Case name such as `S64-R32-D64adap1`; default: the first case of the study.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub bc: Option<BoundaryCondition>,
    /// Reference mesh refinement for the actual error (2 or 4).
    #[arg(long)]
    pub ref_factor: Option<usize>,
}

/// Process exit code for a failed command: 2 for numerical failures, 1 for
/// everything caused by the input.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SolverFailure { .. } | Error::DegenerateElement(_) | Error::NonMatchingPeriodicFaces { .. } => 2,
        _ => 1,
    }
}

fn load_config(args: &CaseArgs, seed: Option<u64>) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(f) = args.ref_factor {
        if f != 2 && f != 4 {
            return Err(Error::Config(format!("--ref-factor must be 2 or 4, got {f}")));
        }
        cfg.errors.ref_factor = f;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = std::env::current_dir().map_err(|e| Error::io(".", e))?.join(out);
    }
    Ok(cfg)
}

fn selected_case(cfg: &SweepConfig, args: &CaseArgs) -> Result<CaseName> {
    match &args.case {
        Some(c) => {
            let name = parse_case_name(c)?;
            name.plan()?;
            if name.size > *cfg.input.extents.iter().min().unwrap() {
                return Err(Error::Config(format!("case {name} does not fit the input extents")));
            }
            Ok(name)
        }
        None => Ok(cfg.cases()[0]),
    }
}

fn selected_bcs(cfg: &SweepConfig, args: &CaseArgs) -> Vec<BoundaryCondition> {
    args.bc.map(|b| vec![b]).unwrap_or_else(|| cfg.study.bcs.clone())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn info(args: &CaseArgs, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(args, seed)?;
    let table = cfg.phase_table()?;
    let grid = cfg.load_grid(&table)?;
    let mut v = json!({
        "dim": grid.dim(),
        "extents": grid.extents(),
        "spacing_mm": grid.spacing(),
        "source": grid.provenance,
        "phases": table,
        "phase_fractions": phase_fractions(&grid),
        "cases": cfg.cases().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
    });
    if args.case.is_some() {
        let flag = args.bc.map(|b| cfg.preserve_boundary(b)).unwrap_or(false);
        let p = prepare_case(&cfg, &grid, &table, selected_case(&cfg, args)?, flag)?;
        let (ndof, deactivated) = count_ndof(&p.mesh);
        v["case"] = json!({
            "name": p.name.to_string(),
            "elements": p.mesh.elements().len(),
            "ndof": ndof,
            "deactivated_ndof": deactivated,
            "phase_fractions": p.mesh.phase_fractions(),
        });
    }
    Ok(to_json(&v))
}

pub fn coarsen(args: &CaseArgs, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(args, seed)?;
    let table = cfg.phase_table()?;
    let grid = cfg.load_grid(&table)?;
    let flag = args.bc.map(|b| cfg.preserve_boundary(b)).unwrap_or(false);
    let p = prepare_case(&cfg, &grid, &table, selected_case(&cfg, args)?, flag)?;
    let (ndof, deactivated) = count_ndof(&p.mesh);
    let v = json!({
        "case": p.name.to_string(),
        "grid_extents": p.grid.extents(),
        "voxel_mm": p.grid.spacing(),
        "elements": p.mesh.elements().len(),
        "nodes": p.mesh.nodes().len(),
        "hanging_nodes": p.mesh.hanging_constraints().len(),
        "ndof": ndof,
        "deactivated_ndof": deactivated,
        "coarsening": p.coarsening,
        "phase_fractions": p.mesh.phase_fractions(),
        "phases": p.table,
    });
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_vtk(&out.join(format!("{}.vtk", p.name)), &p.mesh, &VtkFields::default())?;
        write_file(&out.join(format!("{}.json", p.name)), &to_json(&v))?;
    }
    Ok(to_json(&v))
}

pub fn homogenize(args: &CaseArgs, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(args, seed)?;
    let table = cfg.phase_table()?;
    let grid = cfg.load_grid(&table)?;
    let name = selected_case(&cfg, args)?;
    let mut results = Vec::new();
    for bc in selected_bcs(&cfg, args) {
        let p = prepare_case(&cfg, &grid, &table, name, cfg.preserve_boundary(bc))?;
        let out = run_case(&cfg, &p, bc, ErrorStage::Off)?;
        if let Some(dir) = &args.out {
            write_file(&dir.join(format!("{}_{}.json", p.name, bc.label())), &to_json(&out.homogenization))?;
        }
        results.push(out.homogenization);
    }
    Ok(to_json(&results))
}

pub fn errors(args: &CaseArgs, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(args, seed)?;
    let table = cfg.phase_table()?;
    let grid = cfg.load_grid(&table)?;
    let bc = args.bc.unwrap_or(cfg.study.bcs[0]);
    let p = prepare_case(&cfg, &grid, &table, selected_case(&cfg, args)?, cfg.preserve_boundary(bc))?;
    let stage = if args.ref_factor.is_some() || cfg.errors.stage == ErrorStage::Actual {
        ErrorStage::Actual
    } else {
        ErrorStage::Estimate
    };
    let out = run_case(&cfg, &p, bc, stage)?;
    let report = out.report.as_ref().expect("error stage ran");
    let v = json!({
        "case": p.name.to_string(),
        "bc": bc,
        "ref_factor": (stage == ErrorStage::Actual).then_some(cfg.errors.ref_factor),
        "errors": CaseErrors::from(report),
    });
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        sweep::write_case_vtk(&dir.join(format!("{}_{}.vtk", p.name, bc.label())), &p, &out)?;
        write_file(&dir.join(format!("{}_{}_errors.json", p.name, bc.label())), &to_json(&v))?;
    }
    Ok(to_json(&v))
}

pub fn sweep(args: &CaseArgs, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(args, seed)?;
    let records = run_sweep(&cfg)?;
    let files = emit_tables(&records, cfg.dim(), cfg.output.timing, &cfg.resolve(&cfg.output.dir))?;
    let mut s = String::new();
    for r in &records {
        s.push_str(&format!("{:<24} {:<5} {}\n", r.case, r.bc.label(), r.status));
    }
    for f in files {
        s.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(s)
}

/// Tensors found in a stored JSON document, labelled.
fn stored_tensors(v: &serde_json::Value) -> Result<Vec<(String, ElasticityTensor)>> {
    let parse = |t: &serde_json::Value| {
        serde_json::from_value::<ElasticityTensor>(t.clone()).map_err(|e| Error::Config(format!("bad tensor: {e}")))
    };
    let label = |o: &serde_json::Value| {
        let case = o.get("case").or_else(|| o.get("case_name")).and_then(|c| c.as_str()).unwrap_or("");
        match o.get("bc").and_then(|b| b.as_str()) {
            Some(bc) => format!("{case} {bc}").trim().to_string(),
            None => case.to_string(),
        }
    };
    match v {
        serde_json::Value::Array(items) => {
            let mut out = Vec::new();
            for it in items {
                out.extend(stored_tensors(it)?);
            }
            Ok(out)
        }
        o if o.get("voigt").is_some() => Ok(vec![(String::new(), parse(o)?)]),
        o if o.get("c").is_some() => Ok(vec![(label(o), parse(&o["c"])?)]),
        o if o.get("homogenization").is_some() => match &o["homogenization"] {
            serde_json::Value::Null => Ok(vec![]),
            h => Ok(vec![(label(o), parse(&h["c"])?)]),
        },
        _ => Err(Error::Config("no elasticity tensor found in the document".into())),
    }
}

pub fn isotropy(path: &Path, out: Option<&Path>) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let reports = stored_tensors(&v)?
        .into_iter()
        .map(|(label, c)| Ok(json!({ "label": label, "report": identify_isotropy(&c)? })))
        .collect::<Result<Vec<_>>>()?;
    let s = to_json(&reports);
    if let Some(o) = out {
        write_file(&o.join("isotropy.json"), &s)?;
    }
    Ok(s)
}

/// Executes a parsed command line and returns the text for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    // a second initialization (e.g. from tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .stack_size(sweep::WORKER_STACK_BYTES)
        .build_global();
    match &cli.command {
        Command::Info(a) => info(a, cli.seed),
        Command::Coarsen(a) => coarsen(a, cli.seed),
        Command::Homogenize(a) => homogenize(a, cli.seed),
        Command::Errors(a) => errors(a, cli.seed),
        Command::Sweep(a) => sweep(a, cli.seed),
        Command::Isotropy { tensor, out } => isotropy(tensor, out.as_deref()),
    }
}
