//! Legacy-format VTK unstructured-grid writer for deformed plate geometry.
//!
//! Points are the deformation evaluated at the `(k+1)^2` Lagrange nodes of
//! every cell, duplicated across cells so dG discontinuities survive in the
//! output. Each cell is emitted as `k^2` bilinear quadrilaterals over its
//! node grid. Point data: displacement magnitude `|y - (x,0)|` and the
//! per-cell isometry-defect contribution replicated to the cell's points.

use std::io::Write;
use std::path::Path;

use crate::assembly::Assembler;
use crate::mesh::Mesh;
use crate::space::{evaluate_field, Space};
use crate::Result;

/// Write the deformed geometry of `y` to `path`.
pub fn export_vtk(mesh: &Mesh, space: &Space, assembler: &Assembler, y: &[f64], path: &Path) -> Result<()> {
    let k = space.basis.degree();
    let nodes = space.basis.nodes();
    let n_pts_per_cell = nodes.len();
    let n_cells = mesh.n_cells();
    let n_points = n_pts_per_cell * n_cells;
    let quads_per_cell = k * k;

    let mut points = Vec::with_capacity(n_points);
    let mut magnitudes = Vec::with_capacity(n_points);
    for cell in 0..n_cells {
        let vals = evaluate_field(mesh, space, y, cell, &nodes, 0)?;
        for (node, v) in nodes.iter().zip(&vals) {
            let p = mesh.to_physical(cell, *node);
            let disp = [v.v[0] - p[0], v.v[1] - p[1], v.v[2]];
            points.push(v.v);
            magnitudes.push((disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2]).sqrt());
        }
    }

    // per-cell defect contribution, replicated to the cell's points
    let area = mesh.cell_area();
    let defects: Vec<f64> = assembler
        .per_cell_gram(y)
        .iter()
        .map(|g| {
            let d = [g[0][0] - area, g[0][1], g[1][0], g[1][1] - area];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]).sqrt()
        })
        .collect();

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("platebend deformed geometry\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {n_points} double\n"));
    for p in &points {
        out.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", p[0], p[1], p[2]));
    }
    let n_quads = quads_per_cell * n_cells;
    out.push_str(&format!("CELLS {n_quads} {}\n", 5 * n_quads));
    let stride = k + 1;
    for cell in 0..n_cells {
        let base = cell * n_pts_per_cell;
        for j in 0..k {
            for i in 0..k {
                let p0 = base + j * stride + i;
                let p1 = p0 + 1;
                let p2 = p0 + stride + 1;
                let p3 = p0 + stride;
                out.push_str(&format!("4 {p0} {p1} {p2} {p3}\n"));
            }
        }
    }
    out.push_str(&format!("CELL_TYPES {n_quads}\n"));
    for _ in 0..n_quads {
        out.push_str("9\n");
    }
    out.push_str(&format!("POINT_DATA {n_points}\n"));
    out.push_str("SCALARS displacement_magnitude double 1\nLOOKUP_TABLE default\n");
    for m in &magnitudes {
        out.push_str(&format!("{m:.17e}\n"));
    }
    out.push_str("SCALARS isometry_defect double 1\nLOOKUP_TABLE default\n");
    for cell in 0..n_cells {
        for _ in 0..n_pts_per_cell {
            out.push_str(&format!("{:.17e}\n", defects[cell]));
        }
    }

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Read back the POINTS block of a legacy VTK file (round-trip checks).
pub fn read_vtk_points(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut n_points = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("POINTS ") {
            let n = rest
                .split_whitespace()
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| crate::Error::Config(format!("bad POINTS line: {line}")))?;
            n_points = Some(n);
            break;
        }
    }
    let n = n_points.ok_or_else(|| crate::Error::Config("no POINTS block found".into()))?;
    let mut coords = Vec::with_capacity(3 * n);
    for line in lines {
        for tok in line.split_whitespace() {
            coords.push(
                tok.parse::<f64>()
                    .map_err(|e| crate::Error::Config(format!("bad coordinate `{tok}`: {e}")))?,
            );
        }
        if coords.len() >= 3 * n {
            break;
        }
    }
    if coords.len() < 3 * n {
        return Err(crate::Error::Config(format!(
            "expected {n} points, parsed {}",
            coords.len() / 3
        )));
    }
    Ok(coords[..3 * n]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}
