//! A small size / resolution / discretization study driven by a TOML
//! configuration, written as CSV and JSON tables.

use voxhom::cli::{emit_tables, run_sweep, SweepConfig};

const CONFIG: &str = r#"
[input]
extents = [32, 32]
synthetic = { generator = "blobs", p = 0.4, correlation_length = 2.0, seed = 9 }

[phases]
entries = [
  { id = 0, kind = "solid", young = 50000.0, poisson = 0.3 },
  { id = 1, kind = "solid", young = 20000.0, poisson = 0.3 },
]

[study]
sizes = [16, 32]
resolutions = { "32" = [32, 16] }
adaptive_steps = [0, 1]
bcs = ["kubc", "pbc", "subc"]

[errors]
stage = "actual"
ref_factor = 2

[reference]
case = "SRD32"
bc = "pbc"
"#;

fn main() -> voxhom::Result<()> {
    let cfg = SweepConfig::from_toml(CONFIG)?;
    let records = run_sweep(&cfg)?;
    for r in &records {
        let c11 = r.homogenization.as_ref().map(|h| h.c.c(1, 1)).unwrap_or(f64::NAN);
        let theta = r.errors.as_ref().and_then(|e| e.theta).unwrap_or(f64::NAN);
        println!("{:<18} {:<5} ndof {:>5}  C11 {:>8.1}  theta {:.3}", r.case, r.bc.label(), r.ndof, c11, theta);
    }
    let dir = std::env::temp_dir().join("voxhom-sweep");
    for f in emit_tables(&records, cfg.dim(), false, &dir)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
