//! CSV ingestion.

use std::path::Path;

use kmshrink::DataMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// How to read a dataset file. Columns are named by 1-based index or, when
/// the file has a header, by header name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub header: bool,
    pub label_column: Option<String>,
    pub group_column: Option<String>,
}

/// Parsed dataset. `groups` holds the raw group-column cells, in row order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub data: DataMatrix,
    pub groups: Option<Vec<String>>,
}

fn resolve_column(spec: &str, headers: Option<&csv::StringRecord>, width: usize) -> Result<usize, CliError> {
    if let Ok(i) = spec.trim().parse::<usize>() {
        if i == 0 || i > width {
            return Err(CliError::Input(format!("column {i} is out of range 1..={width}")));
        }
        return Ok(i - 1);
    }
    headers
        .and_then(|h| h.iter().position(|name| name.trim() == spec.trim()))
        .ok_or_else(|| CliError::Input(format!("no column named {spec:?}")))
}

/// Reads a rectangular numeric CSV. Rows and columns in error messages are
/// 1-based file coordinates.
pub fn ingest_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = if opts.header {
        Some(reader.headers().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?.clone())
    } else {
        None
    };

    let mut width = headers.as_ref().map(|h| h.len());
    let mut skip: Vec<usize> = Vec::new();
    let mut group_col = None;
    let mut values = Vec::new();
    let mut groups = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(CliError::Input(format!(
                "row {line} has {} columns, expected {w}",
                record.len()
            )));
        }
        if rows == 0 {
            if let Some(spec) = &opts.label_column {
                skip.push(resolve_column(spec, headers.as_ref(), w)?);
            }
            if let Some(spec) = &opts.group_column {
                let g = resolve_column(spec, headers.as_ref(), w)?;
                skip.push(g);
                group_col = Some(g);
            }
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == group_col {
                groups.push(cell.to_string());
                continue;
            }
            if skip.contains(&c) {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("row {line}, column {}: {cell:?} is not a number", c + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("row {line}, column {}: value is not finite", c + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let cols = values.len() / rows;
    if cols == 0 {
        return Err(CliError::Input(format!("{}: no numeric columns", path.display())));
    }
    let data = DataMatrix::from_vec(rows, cols, values)?;
    Ok(Dataset {
        data,
        groups: group_col.map(|_| groups),
    })
}
