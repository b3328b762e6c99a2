//! Training/test dataset containers with validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{RaeddaError, Result};

/// Labelled training data: `n` rows of dimension `p` with dense class
/// labels in `0..g`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub x: DMatrix<f64>,
    /// zero-based class index per row
    pub labels: Vec<usize>,
    pub g: usize,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        x: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let g = class_names.len();
        if x.nrows() == 0 || g == 0 {
            return Err(RaeddaError::EmptyInput("no rows".into()));
        }
        if labels.len() != x.nrows() {
            return Err(RaeddaError::ShapeError(format!(
                "{} rows but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RaeddaError::ShapeError(
                "non-finite value in training matrix".into(),
            ));
        }
        let p = x.ncols();
        let mut counts = vec![0usize; g];
        for (&l, _) in labels.iter().zip(0..) {
            if l >= g {
                return Err(RaeddaError::ShapeError(format!(
                    "label index {l} out of range for {g} classes"
                )));
            }
            counts[l] += 1;
        }
        // each class needs at least p+1 members for subset initialization
        if counts.iter().any(|&c| c < p + 1) {
            return Err(RaeddaError::EmptyTrainingClass);
        }
        Ok(LabeledDataset {
            x,
            labels,
            g,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

/// Unlabelled test data paired with a [`LabeledDataset`] of the same
/// dimensionality.
#[derive(Debug, Clone)]
pub struct UnlabeledDataset {
    pub y: DMatrix<f64>,
}

impl UnlabeledDataset {
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 {
            return Err(RaeddaError::EmptyInput("no rows".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RaeddaError::ShapeError(
                "non-finite value in test matrix".into(),
            ));
        }
        Ok(UnlabeledDataset { y })
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }
}

/// Checks that a train/test pair agree on dimensionality.
pub fn check_pair(labeled: &LabeledDataset, unlabeled: &UnlabeledDataset) -> Result<()> {
    if labeled.p() != unlabeled.p() {
        return Err(RaeddaError::ShapeError(format!(
            "training dimension {} does not match test dimension {}",
            labeled.p(),
            unlabeled.p()
        )));
    }
    Ok(())
}
