use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};

/// Reads a dataset CSV: a header row naming feature columns `x0, x1, ...`, a
/// label column `y` holding class ids, and an optional `group` column.
///
/// `classes` overrides the class count, which otherwise is `max(y) + 1` (at least 2).
pub fn load_dataset(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, classes)
}

pub(crate) fn parse_dataset(text: &str, classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::InvalidArgument("empty dataset file".into()));
    }

    let mut features = Vec::new();
    let mut label_col = None;
    let mut group_col = None;
    for (c, name) in header.iter().enumerate() {
        match name {
            "y" => label_col = Some(c),
            "group" => group_col = Some(c),
            x if x.starts_with('x') && x[1..].parse::<usize>().is_ok() => {
                features.push((x[1..].parse::<usize>().unwrap(), c))
            }
            other => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected column '{other}'"),
                })
            }
        }
    }
    let label_col = label_col.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing label column 'y'".into(),
    })?;
    features.sort_unstable();
    if features.is_empty() || features.iter().enumerate().any(|(i, &(f, _))| f != i) {
        return Err(Error::Parse {
            line: 1,
            message: "feature columns must be x0..x{p-1}".into(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for &(_, c) in &features {
            let v: f64 = record[c].parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature '{}'", &record[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite feature '{}'", &record[c]),
                });
            }
            values.push(v);
        }
        let label: usize = record[label_col].parse().map_err(|_| Error::Parse {
            line,
            message: format!("label '{}' is not a non-negative integer", &record[label_col]),
        })?;
        labels.push(label);
        if let Some(g) = group_col {
            groups.push(record[g].to_string());
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("dataset has no rows".into()));
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let inputs = DMatrix::from_row_slice(labels.len(), features.len(), &values);
    let ds = Dataset::new(inputs, labels, classes)?;
    if group_col.is_some() {
        ds.with_groups(groups)
    } else {
        Ok(ds)
    }
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header: Vec<String> = (0..ds.input_dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if ds.groups.is_some() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.inputs.row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(ds.labels[i].to_string());
        if let Some(g) = &ds.groups {
            row.push(g[i].clone());
        }
        w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
