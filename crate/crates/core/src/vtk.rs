//! Legacy ASCII VTK output of meshes and solution fields.
//!
//! Local element node order already follows VTK (quad = 9, hexahedron = 12),
//! so connectivity is written as stored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::coarsening::Mesh;
use crate::error::{Error, Result};

/// Optional fields attached to a mesh. Per-cell scalars that are undefined
/// are written as -1.
#[derive(Default)]
pub struct VtkFields<'a> {
    pub displacement: Option<&'a [[f64; 3]]>,
    pub cell_scalars: Vec<(&'a str, Vec<Option<f64>>)>,
    /// Per-cell Voigt vectors (only the first 3 or 6 entries are written).
    pub cell_voigt: Vec<(&'a str, Vec<[f64; 6]>)>,
}

/// Element averages of quadrature-point Voigt values.
pub fn cell_average(mesh: &Mesh, qp: &[[f64; 6]]) -> Vec<[f64; 6]> {
    let nen = 1usize << mesh.dim();
    qp.chunks(nen)
        .map(|c| {
            let mut m = [0.0; 6];
            for v in c {
                for i in 0..6 {
                    m[i] += v[i] / nen as f64;
                }
            }
            m
        })
        .collect()
}

pub fn render_vtk(mesh: &Mesh, fields: &VtkFields) -> Result<String> {
    let dim = mesh.dim();
    let nen = 1usize << dim;
    let ne = mesh.elements().len();
    let nn = mesh.nodes().len();
    let nv = if dim == 2 { 3 } else { 6 };
    let check = |name: &str, len: usize, want: usize| {
        if len == want {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("field {name} has {len} entries, mesh needs {want}")))
        }
    };
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nvoxhom mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {nn} double").unwrap();
    for n in 0..nn {
        let p = mesh.node_position(n);
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    writeln!(s, "CELLS {ne} {}", ne * (nen + 1)).unwrap();
    for el in mesh.elements() {
        s.push_str(&nen.to_string());
        for a in 0..nen {
            write!(s, " {}", el.nodes[a]).unwrap();
        }
        s.push('\n');
    }
    writeln!(s, "CELL_TYPES {ne}").unwrap();
    let ct = if dim == 2 { "9\n" } else { "12\n" };
    for _ in 0..ne {
        s.push_str(ct);
    }

    writeln!(s, "CELL_DATA {ne}").unwrap();
    s.push_str("SCALARS phase_id int 1\nLOOKUP_TABLE default\n");
    for el in mesh.elements() {
        writeln!(s, "{}", el.phase.0).unwrap();
    }
    s.push_str("SCALARS level int 1\nLOOKUP_TABLE default\n");
    for el in mesh.elements() {
        writeln!(s, "{}", el.level).unwrap();
    }
    for (name, vals) in &fields.cell_scalars {
        check(name, vals.len(), ne)?;
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in vals {
            writeln!(s, "{}", v.unwrap_or(-1.0)).unwrap();
        }
    }
    if !fields.cell_voigt.is_empty() {
        writeln!(s, "FIELD voigt {}", fields.cell_voigt.len()).unwrap();
        for (name, vals) in &fields.cell_voigt {
            check(name, vals.len(), ne)?;
            writeln!(s, "{name} {nv} {ne} double").unwrap();
            for v in vals {
                let row: Vec<String> = v[..nv].iter().map(|x| x.to_string()).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        }
    }
    if let Some(u) = fields.displacement {
        check("displacement", u.len(), nn)?;
        writeln!(s, "POINT_DATA {nn}\nVECTORS displacement double").unwrap();
        for d in u {
            writeln!(s, "{} {} {}", d[0], d[1], d[2]).unwrap();
        }
    }
    Ok(s)
}

pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &VtkFields) -> Result<()> {
    let text = render_vtk(mesh, fields)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsening::build_uniform_mesh;
    use crate::microstructure::{PhaseId, PhaseTable, VoxelGrid};

    #[test]
    fn writes_counts_and_sections() {
        let g = VoxelGrid::uniform(&[2, 3], 0.1, PhaseId(0)).unwrap();
        let t = PhaseTable::solids(&[(0, 1000.0, 0.25)]).unwrap();
        let m = build_uniform_mesh(&g, &t, 1).unwrap();
        let u = vec![[0.0; 3]; m.nodes().len()];
        let f = VtkFields {
            displacement: Some(&u),
            cell_scalars: vec![("relative_error", vec![None; 6])],
            cell_voigt: vec![("stress", vec![[1.0; 6]; 6])],
        };
        let s = render_vtk(&m, &f).unwrap();
        assert!(s.contains("POINTS 12 double"));
        assert!(s.contains("CELLS 6 30"));
        assert!(s.contains("CELL_TYPES 6\n9\n"));
        assert!(s.contains("stress 3 6 double\n1 1 1\n"));
        assert!(s.contains("POINT_DATA 12"));
        assert!(s.contains("relative_error double 1\nLOOKUP_TABLE default\n-1\n-1\n"));

        let bad = VtkFields {
            cell_scalars: vec![("x", vec![None; 2])],
            ..Default::default()
        };
        assert!(render_vtk(&m, &bad).is_err());
    }
}
