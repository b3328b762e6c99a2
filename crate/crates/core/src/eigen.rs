//! Volume/shape/orientation factorization of SPD covariance matrices:
//! `Σ = λ D A Dᵀ` with `λ = |Σ|^(1/p)`, `A` the scaled (det 1) diagonal of
//! eigenvalues sorted non-increasing and `D` the matching orthogonal
//! eigenvector matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RaeddaError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenDecomposition {
    /// Volume `λ = |Σ|^(1/p)`.
    pub lambda: f64,
    /// Scaled eigenvalues, sorted non-increasing, product 1.
    pub shape: DVector<f64>,
    /// Orthogonal matrix of eigenvectors, columns ordered by eigenvalue.
    pub orientation: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Spherical unit decomposition of dimension `p`.
    pub fn identity(p: usize) -> Self {
        EigenDecomposition {
            lambda: 1.0,
            shape: DVector::from_element(p, 1.0),
            orientation: DMatrix::identity(p, p),
        }
    }

    /// Builds the decomposition from raw eigenvalues (any order) and their
    /// eigenvector columns. Sorts non-increasing with a stable tie-break on
    /// the original axis index.
    pub fn from_eigen_pairs(eigenvalues: &DVector<f64>, eigenvectors: &DMatrix<f64>) -> Result<Self> {
        let p = eigenvalues.len();
        if eigenvalues.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(RaeddaError::DegenerateCovariance(format!(
                "non-positive eigenvalue in {:?}",
                eigenvalues.as_slice()
            )));
        }
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
        let sorted = DVector::from_iterator(p, order.iter().map(|&i| eigenvalues[i]));
        let mut orient = DMatrix::zeros(p, p);
        for (j, &i) in order.iter().enumerate() {
            orient.set_column(j, &eigenvectors.column(i));
        }
        let log_lambda = sorted.iter().map(|e| e.ln()).sum::<f64>() / p as f64;
        let lambda = log_lambda.exp();
        let shape = sorted.map(|e| e / lambda);
        Ok(EigenDecomposition {
            lambda,
            shape,
            orientation: orient,
        })
    }

    /// Recomposes `λ D A Dᵀ`, symmetrized.
    pub fn compose(&self) -> DMatrix<f64> {
        let p = self.dim();
        let scaled = DMatrix::from_diagonal(&self.shape.map(|a| a * self.lambda));
        let m = &self.orientation * scaled * self.orientation.transpose();
        // enforce exact symmetry against round-off
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        out
    }

    /// Eigenvalues `λ·a_l` of the composed matrix, non-increasing.
    pub fn eigenvalues(&self) -> DVector<f64> {
        self.shape.map(|a| a * self.lambda)
    }

    pub fn generalized_variance(&self) -> f64 {
        self.lambda.powi(self.dim() as i32)
    }

    /// `log |Σ| = p log λ` (shape determinant is 1).
    pub fn log_det(&self) -> f64 {
        self.dim() as f64 * self.lambda.ln()
    }

    /// Mahalanobis quadratic form `xᵀ Σ⁻¹ x` via the factorization.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let rotated = self.orientation.transpose() * x;
        rotated
            .iter()
            .zip(self.shape.iter())
            .map(|(&r, &a)| r * r / (a * self.lambda))
            .sum()
    }
}

/// Eigen-decomposes a symmetric positive definite matrix.
pub fn decompose(sigma: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let p = sigma.nrows();
    if p == 0 || sigma.ncols() != p {
        return Err(RaeddaError::ShapeError(format!(
            "expected square matrix, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let sym = sigma.clone().symmetric_eigen();
    EigenDecomposition::from_eigen_pairs(&sym.eigenvalues, &sym.eigenvectors)
}

/// Ratio `Π/π` of the largest to the smallest eigenvalue over all groups
/// and axes.
pub fn eigen_ratio_decomps(decomps: &[EigenDecomposition]) -> Result<f64> {
    if decomps.is_empty() {
        return Err(RaeddaError::EmptyInput("no covariance matrices".into()));
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for d in decomps {
        for e in d.eigenvalues().iter() {
            max = max.max(*e);
            min = min.min(*e);
        }
    }
    if !(min > 0.0) {
        return Err(RaeddaError::DegenerateCovariance(
            "non-positive eigenvalue".into(),
        ));
    }
    Ok(max / min)
}

/// Ratio `Π/π` for a list of SPD matrices.
pub fn eigen_ratio(sigmas: &[DMatrix<f64>]) -> Result<f64> {
    if sigmas.is_empty() {
        return Err(RaeddaError::EmptyInput("no covariance matrices".into()));
    }
    let decomps = sigmas.iter().map(decompose).collect::<Result<Vec<_>>>()?;
    eigen_ratio_decomps(&decomps)
}
