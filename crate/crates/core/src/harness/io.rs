use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::femcore::CoefficientField;
use crate::grid::Mesh;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-major text grid, whitespace separated, one row per line.
pub fn format_grid(values: &[f64], cols: usize) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(s, "{}", line.join(" ")).expect("string write");
    }
    s
}

pub fn write_grid(path: &Path, values: &[f64], cols: usize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, format_grid(values, cols))?;
    Ok(())
}

/// Reads a rectangular grid and returns `(values, rows, cols)`.
pub fn read_grid(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}:{}: bad number '{t}'", path.display(), ln + 1)))
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Format(format!(
                    "{}:{}: expected {c} values, found {}",
                    path.display(),
                    ln + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format(format!("{}: empty grid", path.display())))?;
    Ok((values, rows, cols))
}

/// Coefficient grid with one value per fine cell, `n` rows of `n`.
pub fn read_kappa(mesh: &Mesh, path: &Path) -> Result<CoefficientField> {
    let (values, rows, cols) = read_grid(path)?;
    let n = mesh.cells_per_side();
    if rows != n || cols != n {
        return Err(Error::DimensionMismatch(format!(
            "kappa grid is {rows} x {cols}, mesh has {n} x {n} cells"
        )));
    }
    CoefficientField::new(mesh, values)
}

/// Nodal grid with `n + 1` rows of `n + 1`; boundary values are dropped.
pub fn read_nodal(mesh: &Mesh, path: &Path) -> Result<DVector<f64>> {
    let (values, rows, cols) = read_grid(path)?;
    let m = mesh.nodes_per_side();
    if rows != m || cols != m {
        return Err(Error::DimensionMismatch(format!(
            "nodal grid is {rows} x {cols}, mesh has {m} x {m} nodes"
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite nodal value {v}")));
    }
    Ok(mesh.restrict(&values))
}

pub fn write_kappa(mesh: &Mesh, kappa: &CoefficientField, path: &Path) -> Result<()> {
    write_grid(path, kappa.values(), mesh.cells_per_side())
}

/// Writes an interior-node field as a full nodal grid.
pub fn write_nodal(mesh: &Mesh, u: &DVector<f64>, path: &Path) -> Result<()> {
    write_grid(path, &mesh.expand(u), mesh.nodes_per_side())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::new(2, 3).unwrap();
        let vals: Vec<f64> = (0..36).map(|k| 1.0 + (k as f64).sqrt() * 1e-3).collect();
        let kappa = CoefficientField::new(&mesh, vals.clone()).unwrap();
        let p = dir.path().join("k.txt");
        write_kappa(&mesh, &kappa, &p).unwrap();
        let back = read_kappa(&mesh, &p).unwrap();
        assert_eq!(back.values(), &vals[..]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));

        let u = mesh.interpolate(|x, y| x * y + 0.1);
        let q = dir.path().join("u.txt");
        write_nodal(&mesh, &u, &q).unwrap();
        assert_eq!(read_nodal(&mesh, &q).unwrap(), u);
    }

    #[test]
    fn malformed_grids() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::new(2, 2).unwrap();
        let p = dir.path().join("k.txt");
        std::fs::write(&p, "1 1 1 1\n1 1 1\n").unwrap();
        assert!(matches!(read_grid(&p), Err(Error::Format(_))));
        std::fs::write(&p, "1 x\n").unwrap();
        assert!(matches!(read_grid(&p), Err(Error::Format(_))));
        std::fs::write(&p, "1 1\n1 1\n").unwrap();
        assert!(matches!(read_kappa(&mesh, &p), Err(Error::DimensionMismatch(_))));
        std::fs::write(&p, "").unwrap();
        assert!(read_grid(&p).is_err());
    }
}
