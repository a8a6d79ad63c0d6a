//! Matrix CSV files, JSON documents and atomic writes.
//!
//! Every value is written with 17 significant digits, which is enough for the
//! reader to recover the identical `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use gcm_core::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    log::debug!("wrote {} ({} bytes)", path.display(), bytes.len());
    Ok(())
}

pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a matrix as CSV, optionally preceded by a header row.
pub fn matrix_to_csv(m: &Matrix, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(names) = header {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&x| format_value(x)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Default header names `prefix1, prefix2, ...`.
pub fn column_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

pub fn write_matrix(path: &Path, m: &Matrix, header: Option<&[String]>) -> CliResult<()> {
    write_atomic(path, matrix_to_csv(m, header).as_bytes())
}

/// Parses CSV text into a matrix; `header` skips the first row.
pub fn parse_matrix(text: &str, header: bool, what: &str) -> CliResult<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Validation(format!("{what}: line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(CliError::Validation(format!(
                    "{what}: line {line}: expected {c} fields, found {}",
                    record.len()
                )))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                CliError::Validation(format!("{what}: line {line}, column {}: cannot parse {field:?}", j + 1))
            })?;
            values.push(x);
        }
        rows += 1;
    }
    let cols = match cols {
        Some(c) if rows > 0 => c,
        _ => return Err(CliError::Validation(format!("{what}: no data rows"))),
    };
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path, header: bool) -> CliResult<Matrix> {
    parse_matrix(&read_text(path)?, header, &path.display().to_string())
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, &to_json(value))
}

pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = Matrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, f64::MAX, 5e-324, -0.0]);
        let text = matrix_to_csv(&m, Some(&column_names("c", 3)));
        let back = parse_matrix(&text, true, "t").unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let err = parse_matrix("1,2\n3,4\n5\n", false, "Y.csv").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn bad_number_names_line_and_column() {
        let err = parse_matrix("a,b\n1,2\n3,x\n", true, "X.csv").unwrap_err();
        assert!(err.to_string().contains("line 3, column 2"), "{err}");
    }

    #[test]
    fn scientific_notation_and_spaces() {
        let m = parse_matrix(" 1e-3 , 2.5E2\n-4,  0.5\n", false, "t").unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1e-3, 250.0, -4.0, 0.5]));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(parse_matrix("", false, "t").is_err());
        assert!(parse_matrix("h1,h2\n", true, "t").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
