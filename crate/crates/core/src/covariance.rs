//! Patterned covariance M-steps: joint (transductive) estimation for the 14
//! models and the closed-form discovery-phase updates for hidden groups,
//! both under the eigenvalue-ratio constraint.

use nalgebra::{DMatrix, DVector};

use crate::constraint::{solve_patterned_eigenvalues, EigenPattern};
use crate::eigen::EigenDecomposition;
use crate::error::{RaeddaError, Result};
use crate::model::{Letter, ModelName};

const EMPTY_COMPONENT_TOL: f64 = 1e-9;
const ORIENT_MAX_ITER: usize = 100;
const ORIENT_TOL: f64 = 1e-8;

/// Weighted within-group cross-products `W_g = Σ w·(x−μ)(x−μ)ᵀ` and
/// effective sizes `n_g = Σ w`.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    pub w: Vec<DMatrix<f64>>,
    pub n: Vec<f64>,
}

impl ScatterAccumulator {
    pub fn groups(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.w[0].nrows()
    }

    fn check_nonempty(&self) -> Result<()> {
        for (g, &ng) in self.n.iter().enumerate() {
            if ng < EMPTY_COMPONENT_TOL {
                return Err(RaeddaError::EmptyComponent { component: g });
            }
        }
        Ok(())
    }
}

/// Fixed components inherited from the learning phase by a discovery-phase
/// M-step. A position the learning model marked `I` contributes the
/// identity.
#[derive(Debug, Clone)]
pub struct FixedComponents {
    pub lambda: Option<f64>,
    pub shape: Option<DVector<f64>>,
    pub orientation: Option<DMatrix<f64>>,
}

impl FixedComponents {
    /// Extracts the shared components of `model` from learning-phase
    /// decompositions (identity for `I` letters, the shared value for `E`
    /// letters, absent for `V`).
    pub fn from_learned(model: ModelName, learned: &[EigenDecomposition]) -> Self {
        let p = learned[0].dim();
        let lambda = match model.volume() {
            Letter::Equal => Some(learned[0].lambda),
            _ => None,
        };
        let shape = match model.shape() {
            Letter::Identity => Some(DVector::from_element(p, 1.0)),
            Letter::Equal => Some(learned[0].shape.clone()),
            Letter::Variable => None,
        };
        let orientation = match model.orientation() {
            Letter::Identity => Some(DMatrix::identity(p, p)),
            Letter::Equal => Some(learned[0].orientation.clone()),
            Letter::Variable => None,
        };
        FixedComponents {
            lambda,
            shape,
            orientation,
        }
    }
}

/// Builds a decomposition from a volume, an unsorted shape and the matching
/// orientation columns, sorting eigenvalues non-increasing (stable).
fn build_decomp(
    lambda: f64,
    shape: &DVector<f64>,
    orientation: &DMatrix<f64>,
) -> EigenDecomposition {
    let p = shape.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| shape[b].partial_cmp(&shape[a]).unwrap());
    let sorted = DVector::from_iterator(p, order.iter().map(|&i| shape[i]));
    let mut orient = DMatrix::zeros(p, p);
    for (j, &i) in order.iter().enumerate() {
        orient.set_column(j, &orientation.column(i));
    }
    EigenDecomposition {
        lambda,
        shape: sorted,
        orientation: orient,
    }
}

/// Splits per-group eigenvalue vectors into (volume, shape) factors,
/// sharing the exact same shape/volume objects across groups when the model
/// ties them together.
fn assemble_decomps(
    model: ModelName,
    eigs: &[DVector<f64>],
    orientations: &[DMatrix<f64>],
) -> Vec<EigenDecomposition> {
    let groups = eigs.len();
    let p = eigs[0].len();
    let geo = |v: &DVector<f64>| (v.iter().map(|x| x.ln()).sum::<f64>() / p as f64).exp();

    let lambdas: Vec<f64> = match model.volume() {
        Letter::Equal => vec![geo(&eigs[0]); groups],
        _ => eigs.iter().map(geo).collect(),
    };
    let shapes: Vec<DVector<f64>> = match model.shape() {
        Letter::Identity => vec![DVector::from_element(p, 1.0); groups],
        Letter::Equal => {
            let shared = eigs[0].map(|e| e / lambdas[0]);
            vec![shared; groups]
        }
        Letter::Variable => eigs
            .iter()
            .zip(&lambdas)
            .map(|(e, &l)| e.map(|x| x / l))
            .collect(),
    };
    (0..groups)
        .map(|g| build_decomp(lambdas[g], &shapes[g], &orientations[g]))
        .collect()
}

/// `Σ_g [n_g log|Σ_g| + tr(W_g Σ_g⁻¹)]`, the covariance-dependent part of
/// minus twice the complete-data log-likelihood.
pub fn scatter_deviance(decomps: &[EigenDecomposition], scatter: &ScatterAccumulator) -> f64 {
    decomps
        .iter()
        .zip(scatter.w.iter())
        .zip(scatter.n.iter())
        .map(|((d, w), &n)| {
            let rotated = d.orientation.transpose() * w * &d.orientation;
            let mut tr = 0.0;
            for l in 0..d.dim() {
                tr += rotated[(l, l)] / (d.lambda * d.shape[l]);
            }
            n * d.log_det() + tr
        })
        .sum()
}

fn eigen_pattern_for(model: ModelName) -> Option<EigenPattern> {
    match (model.volume(), model.shape()) {
        (Letter::Variable, Letter::Identity) => Some(EigenPattern::Spherical),
        (Letter::Variable, Letter::Equal) => Some(EigenPattern::CommonShape { fixed_shape: None }),
        (Letter::Equal, Letter::Variable) => Some(EigenPattern::CommonVolume { fixed_volume: None }),
        (Letter::Variable, Letter::Variable) => Some(EigenPattern::Free),
        // fully tied eigenvalues (E volume, E/I shape) pool across groups
        _ => None,
    }
}

/// Pooled eigenvalues for the fully tied patterns (EII, EEI, EEE, EEV).
fn pooled_eigenvalues(wdiag: &[DVector<f64>], n: &[f64], spherical: bool) -> DVector<f64> {
    let p = wdiag[0].len();
    let total_n: f64 = n.iter().sum();
    let pooled = wdiag.iter().fold(DVector::zeros(p), |acc, g| acc + g);
    if spherical {
        DVector::from_element(p, pooled.sum() / (p as f64 * total_n))
    } else {
        pooled.map(|x| x / total_n)
    }
}

fn solve_given_orientations(
    model: ModelName,
    wdiag: &[DVector<f64>],
    n: &[f64],
    c: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    match eigen_pattern_for(model) {
        Some(pattern) => solve_patterned_eigenvalues(wdiag, n, &pattern, c),
        None => {
            let pooled = pooled_eigenvalues(wdiag, n, model.shape() == Letter::Identity);
            Ok(vec![pooled; wdiag.len()])
        }
    }
}

fn rotated_diag(w: &DMatrix<f64>, d: &DMatrix<f64>) -> DVector<f64> {
    let r = d.transpose() * w * d;
    r.diagonal()
}

/// Eigenvectors/eigenvalues of a PSD scatter, sorted non-increasing.
fn scatter_eigen(w: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = w.nrows();
    let sym = w.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sym.eigenvalues[b].partial_cmp(&sym.eigenvalues[a]).unwrap());
    let vals = DVector::from_iterator(p, order.iter().map(|&i| sym.eigenvalues[i].max(0.0)));
    let mut vecs = DMatrix::zeros(p, p);
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &sym.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// One majorization update of a shared orientation: returns the orthogonal
/// matrix maximizing the linearized objective.
fn mm_orientation_step(
    w: &[DMatrix<f64>],
    inv_eigs: &[DVector<f64>],
    d0: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = d0.nrows();
    let mut z = DMatrix::zeros(p, p);
    for (wg, ie) in w.iter().zip(inv_eigs) {
        let alpha = scatter_eigen(wg).0[0];
        let t = DMatrix::from_diagonal(&DVector::from_element(p, alpha)) - wg;
        z += t * d0 * DMatrix::from_diagonal(ie);
    }
    let svd = z.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    u * vt
}

/// Joint patterned covariance M-step over all groups.
///
/// The ratio constraint `c` is enforced only for the models that require
/// it. `warm_start` seeds the shared-orientation iterations and acts as a
/// monotonicity safeguard: the returned estimate never has a larger
/// deviance than the warm start.
pub fn mstep_covariances(
    model: ModelName,
    scatter: &ScatterAccumulator,
    c: f64,
    warm_start: Option<&[EigenDecomposition]>,
) -> Result<Vec<EigenDecomposition>> {
    let (decomps, _) = mstep_covariances_diag(model, scatter, c, warm_start)?;
    Ok(decomps)
}

/// As [`mstep_covariances`] but also reports whether the shared-orientation
/// inner solver converged (always true for models with a closed form).
pub fn mstep_covariances_diag(
    model: ModelName,
    scatter: &ScatterAccumulator,
    c: f64,
    warm_start: Option<&[EigenDecomposition]>,
) -> Result<(Vec<EigenDecomposition>, bool)> {
    if c < 1.0 {
        return Err(RaeddaError::InvalidConstraint(c));
    }
    scatter.check_nonempty()?;
    let groups = scatter.groups();
    let p = scatter.dim();
    let c_opt = if model.er_required() { Some(c) } else { None };

    let mut inner_converged = true;
    let result = match model.orientation() {
        Letter::Identity => {
            let wdiag: Vec<DVector<f64>> = scatter.w.iter().map(|w| w.diagonal()).collect();
            let eigs = solve_given_orientations(model, &wdiag, &scatter.n, c_opt)?;
            let eye = DMatrix::identity(p, p);
            let orients = vec![eye; groups];
            assemble_decomps(model, &eigs, &orients)
        }
        Letter::Variable => {
            let mut wdiag = Vec::with_capacity(groups);
            let mut orients = Vec::with_capacity(groups);
            for w in &scatter.w {
                let (vals, vecs) = scatter_eigen(w);
                wdiag.push(vals);
                orients.push(vecs);
            }
            let eigs = solve_given_orientations(model, &wdiag, &scatter.n, c_opt)?;
            assemble_decomps(model, &eigs, &orients)
        }
        Letter::Equal => {
            if model == ModelName::EEE {
                let total_n: f64 = scatter.n.iter().sum();
                let pooled = scatter
                    .w
                    .iter()
                    .fold(DMatrix::zeros(p, p), |acc, w| acc + w)
                    / total_n;
                let (vals, vecs) = scatter_eigen(&pooled);
                let floor = crate::constraint::EIG_FLOOR_REL * vals[0].max(f64::MIN_POSITIVE);
                let vals = vals.map(|v| v.max(floor));
                let shared = assemble_decomps(
                    model,
                    &[vals],
                    std::slice::from_ref(&vecs),
                )
                .pop()
                .unwrap();
                vec![shared; groups]
            } else {
                // VEE / EVE / VVE: alternate shared-orientation updates with
                // exact patterned eigenvalue solves
                let mut orient = match warm_start {
                    Some(ws) => ws[0].orientation.clone(),
                    None => {
                        let pooled = scatter
                            .w
                            .iter()
                            .fold(DMatrix::zeros(p, p), |acc, w| acc + w);
                        scatter_eigen(&pooled).1
                    }
                };
                let mut eigs: Vec<DVector<f64>> = match warm_start {
                    Some(ws) => ws.iter().map(|d| d.eigenvalues()).collect(),
                    None => scatter
                        .w
                        .iter()
                        .zip(&scatter.n)
                        .map(|(w, &n)| {
                            DVector::from_element(p, w.trace() / (p as f64 * n))
                        })
                        .collect(),
                };
                let objective = |orient: &DMatrix<f64>, eigs: &[DVector<f64>]| -> f64 {
                    let mut obj = 0.0;
                    for g in 0..groups {
                        let wd = rotated_diag(&scatter.w[g], orient);
                        for l in 0..p {
                            obj += scatter.n[g] * eigs[g][l].ln() + wd[l] / eigs[g][l];
                        }
                    }
                    obj
                };
                let mut prev_obj = f64::INFINITY;
                inner_converged = false;
                for _ in 0..ORIENT_MAX_ITER {
                    orient = if model == ModelName::VEE {
                        // closed-form: eigenvectors of the volume-weighted pool
                        let lambdas: Vec<f64> = eigs
                            .iter()
                            .map(|e| (e.iter().map(|x| x.ln()).sum::<f64>() / p as f64).exp())
                            .collect();
                        let s = scatter
                            .w
                            .iter()
                            .zip(&lambdas)
                            .fold(DMatrix::zeros(p, p), |acc, (w, &l)| acc + w / l);
                        scatter_eigen(&s).1
                    } else {
                        let inv: Vec<DVector<f64>> =
                            eigs.iter().map(|e| e.map(|x| 1.0 / x)).collect();
                        let mut d = orient.clone();
                        for _ in 0..ORIENT_MAX_ITER {
                            let d_new = mm_orientation_step(&scatter.w, &inv, &d);
                            let delta = (&d_new - &d).norm();
                            d = d_new;
                            if delta < 1e-10 {
                                break;
                            }
                        }
                        d
                    };
                    let wdiag: Vec<DVector<f64>> = scatter
                        .w
                        .iter()
                        .map(|w| rotated_diag(w, &orient))
                        .collect();
                    eigs = solve_given_orientations(model, &wdiag, &scatter.n, c_opt)?;
                    let obj = objective(&orient, &eigs);
                    if (prev_obj - obj).abs() <= ORIENT_TOL * obj.abs().max(1.0) {
                        inner_converged = true;
                        break;
                    }
                    prev_obj = obj;
                }
                let orients = vec![orient; groups];
                assemble_decomps(model, &eigs, &orients)
            }
        }
    };

    // monotonicity safeguard: never hand back something worse than the
    // warm start on the same responsibilities
    if let Some(ws) = warm_start {
        if ws.len() == groups
            && scatter_deviance(&result, scatter) > scatter_deviance(ws, scatter)
        {
            return Ok((ws.to_vec(), inner_converged));
        }
    }
    Ok((result, inner_converged))
}

/// Discovery-phase covariance M-step for the hidden groups only, with the
/// learned components frozen.
pub fn mstep_discovery(
    learning_model: ModelName,
    discovery_model: ModelName,
    scatter_hidden: &ScatterAccumulator,
    fixed: &FixedComponents,
    c: f64,
) -> Result<Vec<EigenDecomposition>> {
    if !learning_model.allows_discovery(discovery_model) {
        return Err(RaeddaError::ModelLatticeViolation {
            learning: learning_model.to_string(),
            discovery: discovery_model.to_string(),
        });
    }
    if c < 1.0 {
        return Err(RaeddaError::InvalidConstraint(c));
    }
    scatter_hidden.check_nonempty()?;
    let groups = scatter_hidden.groups();
    let p = scatter_hidden.dim();

    let need = |ok: bool, what: &str| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(RaeddaError::ConfigError(format!(
                "discovery model {discovery_model} inherits {what} but the learning phase did not fix it"
            )))
        }
    };
    if discovery_model.volume() == Letter::Equal {
        need(fixed.lambda.is_some(), "the volume")?;
    }
    if discovery_model.shape() == Letter::Equal {
        need(fixed.shape.is_some(), "the shape")?;
    }
    if discovery_model.orientation() == Letter::Equal {
        need(fixed.orientation.is_some(), "the orientation")?;
    }

    // fully inherited covariance: nothing to estimate
    if discovery_model.volume() == Letter::Equal
        && matches!(discovery_model.shape(), Letter::Identity | Letter::Equal)
        && matches!(
            discovery_model.orientation(),
            Letter::Identity | Letter::Equal
        )
    {
        let shape = match discovery_model.shape() {
            Letter::Identity => DVector::from_element(p, 1.0),
            _ => fixed.shape.clone().unwrap(),
        };
        let orientation = match discovery_model.orientation() {
            Letter::Identity => DMatrix::identity(p, p),
            _ => fixed.orientation.clone().unwrap(),
        };
        let d = build_decomp(fixed.lambda.unwrap(), &shape, &orientation);
        return Ok(vec![d; groups]);
    }

    // orientation per hidden group
    let orients: Vec<DMatrix<f64>> = match discovery_model.orientation() {
        Letter::Identity => vec![DMatrix::identity(p, p); groups],
        Letter::Equal => vec![fixed.orientation.clone().unwrap(); groups],
        Letter::Variable => scatter_hidden.w.iter().map(|w| scatter_eigen(w).1).collect(),
    };

    // inherited eigenvalues with free orientation: nothing left to solve,
    // each hidden group keeps the shared volume/shape on its own axes
    if discovery_model.volume() == Letter::Equal
        && matches!(discovery_model.shape(), Letter::Identity | Letter::Equal)
    {
        let shape = match discovery_model.shape() {
            Letter::Identity => DVector::from_element(p, 1.0),
            _ => fixed.shape.clone().unwrap(),
        };
        return Ok(orients
            .iter()
            .map(|d| build_decomp(fixed.lambda.unwrap(), &shape, d))
            .collect());
    }
    let wdiag: Vec<DVector<f64>> = scatter_hidden
        .w
        .iter()
        .zip(&orients)
        .map(|(w, d)| rotated_diag(w, d))
        .collect();

    let pattern = match (discovery_model.volume(), discovery_model.shape()) {
        (Letter::Variable, Letter::Identity) => EigenPattern::Spherical,
        (Letter::Variable, Letter::Equal) => EigenPattern::CommonShape {
            fixed_shape: Some(fixed.shape.clone().unwrap()),
        },
        (Letter::Equal, Letter::Variable) => EigenPattern::CommonVolume {
            fixed_volume: Some(fixed.lambda.unwrap()),
        },
        (Letter::Variable, Letter::Variable) => EigenPattern::Free,
        _ => unreachable!("fully inherited patterns returned above"),
    };
    let c_opt = if discovery_model.er_required() {
        Some(c)
    } else {
        None
    };
    let eigs = solve_patterned_eigenvalues(&wdiag, &scatter_hidden.n, &pattern, c_opt)?;
    Ok(assemble_decomps(discovery_model, &eigs, &orients))
}
