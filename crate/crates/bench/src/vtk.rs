//! Legacy ASCII VTK output of a deformed plate.
//!
//! Each cell contributes its six P2 nodes as points and four linear
//! sub-triangles, so the file shows the discontinuous field as computed.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use isoplate::dgspace::{p2_nodes, DofMap, FEFunction};
use isoplate::mesh::TriMesh;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct VtkError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Sub-triangles of a P2 cell in node order v0, v1, v2, m01, m12, m20.
const SUB_TRIANGLES: [[usize; 3]; 4] = [[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]];

/// Reference position and deformed position of every P2 node, cell by cell.
pub fn node_positions(mesh: &TriMesh, y: &FEFunction) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let dofs = DofMap::new(mesh);
    let mut out = Vec::with_capacity(6 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let nodes = p2_nodes(&mesh.cell_points(c));
        for (i, x) in nodes.iter().enumerate() {
            let yi = Vector3::from_fn(|k, _| y.coeffs[dofs.y(c, k, i)]);
            out.push((Vector3::new(x.x, x.y, 0.0), yi));
        }
    }
    out
}

/// Largest `|y₃|` over the P2 nodes.
pub fn max_deflection(mesh: &TriMesh, y: &FEFunction) -> f64 {
    node_positions(mesh, y).iter().map(|(_, y)| y.z.abs()).fold(0.0, f64::max)
}

pub fn write_vtk<W: Write>(mut out: W, mesh: &TriMesh, y: &FEFunction, title: &str) -> io::Result<()> {
    let nodes = node_positions(mesh, y);
    let n_cells = 4 * mesh.n_cells();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", nodes.len())?;
    for (_, p) in &nodes {
        writeln!(out, "{:.12e} {:.12e} {:.12e}", p.x, p.y, p.z)?;
    }
    writeln!(out, "CELLS {} {}", n_cells, 4 * n_cells)?;
    for c in 0..mesh.n_cells() {
        for t in SUB_TRIANGLES {
            writeln!(out, "3 {} {} {}", 6 * c + t[0], 6 * c + t[1], 6 * c + t[2])?;
        }
    }
    writeln!(out, "CELL_TYPES {n_cells}")?;
    for _ in 0..n_cells {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {}", nodes.len())?;
    writeln!(out, "VECTORS displacement double")?;
    for (x, p) in &nodes {
        let d = p - x;
        writeln!(out, "{:.12e} {:.12e} {:.12e}", d.x, d.y, d.z)?;
    }
    writeln!(out, "SCALARS horizontal_displacement double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for (x, p) in &nodes {
        writeln!(out, "{:.12e}", (p.x - x.x).hypot(p.y - x.y))?;
    }
    writeln!(out, "SCALARS y3 double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for (_, p) in &nodes {
        writeln!(out, "{:.12e}", p.z)?;
    }
    Ok(())
}

pub fn export_vtk(path: &Path, mesh: &TriMesh, y: &FEFunction, title: &str) -> Result<(), VtkError> {
    let err = |source| VtkError {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    write_vtk(&mut w, mesh, y, title).map_err(err)?;
    w.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use isoplate::dgspace::interpolate_v;
    use isoplate::mesh::{build_structured, Rect, Split};

    fn section_counts(text: &str) -> Vec<(String, usize)> {
        text.lines()
            .filter_map(|l| {
                let mut it = l.split_whitespace();
                let key = it.next()?;
                ["POINTS", "CELLS", "CELL_TYPES", "POINT_DATA"]
                    .contains(&key)
                    .then(|| (key.to_string(), it.next().unwrap().parse().unwrap()))
            })
            .collect()
    }

    #[test]
    fn flat_state_has_zero_fields_and_consistent_counts() {
        let m = build_structured(2, 1, Rect::new(0.0, 2.0, 0.0, 1.0), Split::Crisscross).unwrap();
        let y = interpolate_v(&m, |x| Vector3::new(x.x, x.y, 0.0));
        let mut buf = Vec::new();
        write_vtk(&mut buf, &m, &y, "flat").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let counts = section_counts(&text);
        let cells = m.n_cells();
        assert_eq!(
            counts,
            vec![
                ("POINTS".into(), 6 * cells),
                ("CELLS".into(), 4 * cells),
                ("CELL_TYPES".into(), 4 * cells),
                ("POINT_DATA".into(), 6 * cells),
            ]
        );
        // every data line after POINT_DATA is zero
        let fields = text.split("POINT_DATA").nth(1).unwrap();
        let data = fields
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with(|c: char| c.is_ascii_alphabetic()));
        let mut n = 0;
        for line in data {
            n += 1;
            assert!(line.split_whitespace().all(|t| t.parse::<f64>().unwrap() == 0.0), "{line}");
        }
        assert_eq!(n, 3 * 6 * cells);
        assert_eq!(max_deflection(&m, &y), 0.0);
    }

    #[test]
    fn sub_triangles_tile_the_cell() {
        // the four sub-triangle areas of a P2 node set sum to the cell area
        let p = [
            isoplate::mesh::Point2::new(0.0, 0.0),
            isoplate::mesh::Point2::new(2.0, 0.1),
            isoplate::mesh::Point2::new(0.3, 1.0),
        ];
        let n = p2_nodes(&p);
        let area = |a: usize, b: usize, c: usize| 0.5 * (n[b] - n[a]).perp(&(n[c] - n[a]));
        let total: f64 = SUB_TRIANGLES.iter().map(|t| area(t[0], t[1], t[2])).sum();
        assert!((total - area(0, 1, 2)).abs() < 1e-14);
        assert!(SUB_TRIANGLES.iter().all(|t| area(t[0], t[1], t[2]) > 0.0));
    }

    #[test]
    fn vertical_field_is_reported() {
        let m = build_structured(1, 1, Rect::new(0.0, 1.0, 0.0, 1.0), Split::TwoTriangle).unwrap();
        let y = interpolate_v(&m, |x| Vector3::new(x.x, x.y, 0.5 * x.x));
        assert!((max_deflection(&m, &y) - 0.5).abs() < 1e-15);
    }
}
