//! CSV dumps of fields and meshes: full double precision (17 significant
//! digits), LF line endings, deterministic row-major cell order.

use crate::error::{Error, Result};
use crate::geometry::{CellLabel, Mesh};
use crate::material::DesignField;
use crate::operators::{CellField, Support, VectorCellField};
use std::io::Write;
use std::path::Path;

/// A field to dump, borrowing the typed variants.
pub enum FieldView<'a> {
    Cell(&'a CellField),
    Vector(&'a VectorCellField),
    Design(&'a DesignField),
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn coord_header(dim: usize) -> &'static str {
    match dim {
        1 => "x",
        2 => "x,y",
        _ => "x,y,z",
    }
}

/// Write a field as `cell_id,x[,y[,z]],value[...]`. Interior-supported
/// fields dump interior cells only; all-cell fields dump every cell.
pub fn write_field_csv(field: &FieldView<'_>, mesh: &Mesh, path: &Path) -> Result<()> {
    let dim = mesh.domain.dim;
    let mut out = String::new();
    let write_row = |out: &mut String, cell: u32, values: &[f64]| {
        out.push_str(&cell.to_string());
        for c in mesh.center(cell) {
            out.push(',');
            out.push_str(&fmt(*c));
        }
        for v in values {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    };
    match field {
        FieldView::Cell(f) => {
            out.push_str(&format!("cell_id,{},value\n", coord_header(dim)));
            match f.support {
                Support::Interior => {
                    for (r, &cell) in mesh.interior_ids.iter().enumerate() {
                        write_row(&mut out, cell, &f.values[r..r + 1]);
                    }
                }
                Support::AllCells => {
                    for cell in 0..mesh.n_cells() as u32 {
                        write_row(&mut out, cell, &f.values[cell as usize..cell as usize + 1]);
                    }
                }
            }
        }
        FieldView::Vector(f) => {
            let names: Vec<String> = (0..f.dim).map(|d| format!("q{}", ["x", "y", "z"][d])).collect();
            out.push_str(&format!("cell_id,{},{}\n", coord_header(dim), names.join(",")));
            match f.support {
                Support::Interior => {
                    for (r, &cell) in mesh.interior_ids.iter().enumerate() {
                        write_row(&mut out, cell, &f.values[r * f.dim..(r + 1) * f.dim]);
                    }
                }
                Support::AllCells => {
                    for cell in 0..mesh.n_cells() {
                        write_row(&mut out, cell as u32, &f.values[cell * f.dim..(cell + 1) * f.dim]);
                    }
                }
            }
        }
        FieldView::Design(f) => {
            out.push_str(&format!("cell_id,{},kappa\n", coord_header(dim)));
            for cell in 0..mesh.n_cells() {
                write_row(&mut out, cell as u32, &f.kappa[cell..cell + 1]);
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Mesh dump: `cell_id,x[,y[,z]],label`.
pub fn write_mesh_csv(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut out = format!("cell_id,{},label\n", coord_header(mesh.domain.dim));
    for cell in 0..mesh.n_cells() as u32 {
        out.push_str(&cell.to_string());
        for c in mesh.center(cell) {
            out.push(',');
            out.push_str(&fmt(*c));
        }
        out.push(',');
        out.push_str(match mesh.labels[cell as usize] {
            CellLabel::Interior => "interior",
            CellLabel::Collar => "collar",
        });
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

/// Parsed numeric CSV: cell ids, coordinates, and value columns.
pub struct FieldCsv {
    pub header: Vec<String>,
    pub cell_ids: Vec<u32>,
    /// Row-major numeric columns after `cell_id` (coordinates then values).
    pub columns: Vec<Vec<f64>>,
}

/// Read back a field CSV written by [`write_field_csv`].
pub fn read_field_csv(path: &Path) -> Result<FieldCsv> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty file", path.display())))?;
    let header: Vec<String> = header_line.split(',').map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("cell_id") {
        return Err(Error::Config(format!("{}: missing cell_id header", path.display())));
    }
    let ncols = header.len() - 1;
    let mut cell_ids = Vec::new();
    let mut columns = vec![Vec::new(); ncols];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| Error::Config(format!("{}: bad cell id on data row {}", path.display(), lineno + 1)))?;
        cell_ids.push(id);
        for c in 0..ncols {
            let tok = parts.next().ok_or_else(|| {
                Error::Config(format!("{}: short row {}", path.display(), lineno + 1))
            })?;
            let v = tok.parse::<f64>().map_err(|_| {
                Error::Config(format!("{}: bad number '{tok}' on row {}", path.display(), lineno + 1))
            })?;
            columns[c].push(v);
        }
    }
    Ok(FieldCsv { header, cell_ids, columns })
}

/// Load a per-cell design written by [`write_field_csv`] back onto a mesh.
pub fn read_design_csv(path: &Path, mesh: &Mesh, bounds: crate::material::Bounds) -> Result<DesignField> {
    let csv = read_field_csv(path)?;
    if csv.cell_ids.len() != mesh.n_cells() {
        return Err(Error::Config(format!(
            "{}: {} rows for a mesh with {} cells",
            path.display(),
            csv.cell_ids.len(),
            mesh.n_cells()
        )));
    }
    let values = csv.columns.last().ok_or_else(|| {
        Error::Config(format!("{}: no value column", path.display()))
    })?;
    let mut kappa = vec![0.0; mesh.n_cells()];
    for (row, &id) in csv.cell_ids.iter().enumerate() {
        if id as usize >= mesh.n_cells() {
            return Err(Error::Config(format!("{}: cell id {id} out of range", path.display())));
        }
        kappa[id as usize] = values[row];
    }
    Ok(DesignField { kappa, bounds })
}
