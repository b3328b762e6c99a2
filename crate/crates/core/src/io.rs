//! CSV ingestion: header-aware feature parsing, string class labels with a
//! `?` sentinel for unlabeled rows, and deterministic class-id assignment.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{RaeddaError, Result};

/// Sentinel marking an unlabeled row in a combined train/test file.
pub const UNLABELED_SENTINEL: &str = "?";

struct RawTable {
    headers: Vec<String>,
    /// per row: (label text or None, feature values)
    rows: Vec<(Option<String>, Vec<f64>)>,
}

fn read_table(path: &Path, label_column: Option<&str>) -> Result<RawTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            RaeddaError::ConfigError(format!("label column '{name}' not found in header"))
        })?),
        None => None,
    };
    let width = headers.len();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(RaeddaError::ParseError {
                row: r + 2,
                column: record.len(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let mut label = None;
        let mut features = Vec::with_capacity(width - label_idx.map_or(0, |_| 1));
        for (c, field) in record.iter().enumerate() {
            if Some(c) == label_idx {
                let text = field.trim();
                if text != UNLABELED_SENTINEL && !text.is_empty() {
                    label = Some(text.to_owned());
                }
                continue;
            }
            let value: f64 = field.trim().parse().map_err(|_| RaeddaError::ParseError {
                row: r + 2,
                column: c + 1,
                message: format!("'{field}' is not a finite number"),
            })?;
            if !value.is_finite() {
                return Err(RaeddaError::ParseError {
                    row: r + 2,
                    column: c + 1,
                    message: format!("non-finite value {value}"),
                });
            }
            features.push(value);
        }
        rows.push((label, features));
    }
    Ok(RawTable { headers, rows })
}

fn build_matrix(rows: &[&Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

fn assemble(
    labeled_rows: Vec<(String, Vec<f64>)>,
    unlabeled_rows: Vec<Vec<f64>>,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    if labeled_rows.is_empty() {
        return Err(RaeddaError::EmptyTrainingClass);
    }
    // deterministic ids: distinct label strings in lexicographic order
    let names: Vec<String> = labeled_rows
        .iter()
        .map(|(l, _)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let p = labeled_rows[0].1.len();
    let labels: Vec<usize> = labeled_rows
        .iter()
        .map(|(l, _)| names.iter().position(|n| n == l).unwrap())
        .collect();
    let feats: Vec<&Vec<f64>> = labeled_rows.iter().map(|(_, f)| f).collect();
    let x = build_matrix(&feats, p);
    let urefs: Vec<&Vec<f64>> = unlabeled_rows.iter().collect();
    let y = build_matrix(&urefs, p);
    let labeled = LabeledDataset::new(x, labels, names)?;
    let unlabeled = UnlabeledDataset::new(y)?;
    if unlabeled.p() != labeled.p() && unlabeled.m() > 0 {
        return Err(RaeddaError::ShapeError(format!(
            "train has {} features, test has {}",
            labeled.p(),
            unlabeled.p()
        )));
    }
    Ok((labeled, unlabeled))
}

/// Loads a combined file where rows labelled `?` form the test set.
pub fn load_combined(
    path: &Path,
    label_column: &str,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let table = read_table(path, Some(label_column))?;
    let mut labeled_rows = Vec::new();
    let mut unlabeled_rows = Vec::new();
    for (label, features) in table.rows {
        match label {
            Some(l) => labeled_rows.push((l, features)),
            None => unlabeled_rows.push(features),
        }
    }
    assemble(labeled_rows, unlabeled_rows)
}

/// Loads separate train/test files; every training row must be labelled
/// and the test file needs no label column (one labelled `?` throughout is
/// also accepted).
pub fn load_datasets(
    train_path: &Path,
    test_path: &Path,
    label_column: &str,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let train = read_table(train_path, Some(label_column))?;
    let mut labeled_rows = Vec::new();
    for (r, (label, features)) in train.rows.into_iter().enumerate() {
        match label {
            Some(l) => labeled_rows.push((l, features)),
            None => {
                return Err(RaeddaError::ParseError {
                    row: r + 2,
                    column: 0,
                    message: "training file contains an unlabeled row".into(),
                })
            }
        }
    }
    let test_headers: Vec<String> = csv::Reader::from_path(test_path)?
        .headers()?
        .iter()
        .map(str::to_owned)
        .collect();
    let test_label = test_headers.iter().any(|h| h == label_column);
    let test = read_table(test_path, test_label.then_some(label_column))?;
    let expected = labeled_rows
        .first()
        .map(|(_, f)| f.len())
        .unwrap_or_default();
    let unlabeled_rows: Vec<Vec<f64>> = test.rows.into_iter().map(|(_, f)| f).collect();
    if let Some(bad) = unlabeled_rows.iter().position(|f| f.len() != expected) {
        return Err(RaeddaError::ParseError {
            row: bad + 2,
            column: 0,
            message: format!(
                "test row has {} features, training data has {expected}",
                unlabeled_rows[bad].len()
            ),
        });
    }
    let _ = test.headers;
    assemble(labeled_rows, unlabeled_rows)
}
