//! Headerless float CSV: UTF-8, LF line endings, one record per line,
//! comma-separated decimal components.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// Reads a rectangular float matrix, one row per line. Errors carry the
/// file, row and column of the offending token.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_no, tok) in line.split(',').enumerate() {
            let v: f64 = tok.trim().parse().map_err(|_| {
                CliError::input(format!(
                    "{}: row {}, column {}: cannot parse '{}' as a number",
                    path.display(),
                    line_no + 1,
                    col_no + 1,
                    tok.trim()
                ))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::input(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    line_no + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

/// Shortest representation that round-trips through f64.
pub fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:?}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = std::env::temp_dir().join("safectl-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -0.25, 3.5e-9, 0.1, 2.0, -7.0]);
        let text: String = (0..2)
            .map(|r| {
                (0..3)
                    .map(|c| format_float(m[(r, c)]))
                    .collect::<Vec<_>>()
                    .join(",")
                    + "\n"
            })
            .collect();
        std::fs::write(&p, text).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = std::env::temp_dir().join("safectl-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("ragged.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn bad_token_has_position() {
        let dir = std::env::temp_dir().join("safectl-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.csv");
        std::fs::write(&p, "1,x\n").unwrap();
        let err = read_matrix(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("column 2"), "{msg}");
    }
}
