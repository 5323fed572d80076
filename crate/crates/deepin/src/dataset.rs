//! Dataset CSV files: a header row, feature columns and one response column.

use std::path::Path;

use deepin_core::Matrix;

use crate::error::{HarnessError, Result};

/// A design matrix with its response and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Names of the columns of `x`, in file order.
    pub features: Vec<String>,
    pub response: String,
}

/// Reads `path`, taking every column except `response` as a feature.
///
/// Row numbers in errors count file lines: the header is row 1.
pub fn read_dataset(path: &Path, response: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let dataset_err = |message: String| HarnessError::Dataset {
        path: path.to_path_buf(),
        message,
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(dataset_err("missing header row".into()));
    }
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(dataset_err(format!("duplicate column name `{h}`")));
        }
    }
    let y_col = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| dataset_err(format!("missing response column `{response}`")))?;
    let features: Vec<String> = header.iter().filter(|h| *h != response).cloned().collect();
    let d = features.len();
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(dataset_err(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v = parse_cell(cell).map_err(|message| HarnessError::Cell {
                path: path.to_path_buf(),
                row,
                column: header[c].clone(),
                message,
            })?;
            if c == y_col {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(dataset_err("no data rows".into()));
    }
    let x = Matrix::from_vec(y.len(), d, values)?;
    Ok(Dataset {
        x,
        y,
        features,
        response: response.to_string(),
    })
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    let t = cell.trim();
    let v: f64 = t.parse().map_err(|_| format!("cannot parse `{t}` as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value `{t}`"))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::io(path, source),
        kind => HarnessError::Dataset {
            path: path.to_path_buf(),
            message: format!("{kind:?}"),
        },
    }
}

/// Writes `x` as columns `x1..xd` followed by `response`.
///
/// Values use the shortest decimal form that reads back to the same bits.
pub fn write_dataset(path: &Path, x: &Matrix, y: &[f64], response: &str) -> Result<()> {
    if x.rows() != y.len() {
        return Err(HarnessError::Contract("write_dataset: rows of x and y differ".into()));
    }
    let io = |e: csv::Error| csv_error(path, e);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io)?;
    let mut header: Vec<String> = (1..=x.cols()).map(|j| format!("x{j}")).collect();
    header.push(response.to_string());
    w.write_record(&header).map_err(io)?;
    let mut fields = Vec::with_capacity(x.cols() + 1);
    for i in 0..x.rows() {
        fields.clear();
        fields.extend(x.row(i).iter().map(|v| v.to_string()));
        fields.push(y[i].to_string());
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
