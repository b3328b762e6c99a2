//! Eigenvalue-ratio constraint enforcement.
//!
//! Two layers live here. [`constrain_eigenvalues`] solves the classical
//! truncation problem for freely varying eigenvalues: each eigenvalue is
//! clamped to `[m, c·m]` and the clamp level `m` is chosen to maximize the
//! weighted Gaussian log-likelihood term. On top of that,
//! [`solve_patterned_eigenvalues`] solves the same problem when the
//! eigenvalues carry a sharing pattern across groups (common volume or
//! common shape), which turns into a small convex program in log-eigenvalue
//! space solved by a log-barrier Newton method.

use nalgebra::{DMatrix, DVector};

use crate::error::{RaeddaError, Result};

const RATIO_SLACK: f64 = 1e-10;

/// Relative floor applied to near-zero eigenvalues of degenerate scatter.
pub const EIG_FLOOR_REL: f64 = 1e-12;

/// Weighted objective `Σ_g w_g Σ_l (log d + e/d)` with `d = clamp(e, m, c·m)`.
/// This is the (negated, scaled) Gaussian log-likelihood term being minimized.
fn truncation_objective(eigs: &[Vec<f64>], weights: &[f64], m: f64, c: f64) -> f64 {
    let mut obj = 0.0;
    for (group, &w) in eigs.iter().zip(weights) {
        for &e in group {
            let d = e.clamp(m, c * m);
            obj += w * (d.ln() + e / d);
        }
    }
    obj
}

/// Optimal truncation of per-group eigenvalue arrays under `Π/π ≤ c`.
///
/// Returns the input unchanged when it is already feasible. Zero entries are
/// floored relative to the largest eigenvalue before truncation.
pub fn constrain_eigenvalues(
    eigs: &[Vec<f64>],
    weights: &[f64],
    c: f64,
) -> Result<Vec<Vec<f64>>> {
    if c < 1.0 {
        return Err(RaeddaError::InvalidConstraint(c));
    }
    if eigs.is_empty() {
        return Err(RaeddaError::EmptyInput("no eigenvalue arrays".into()));
    }
    if eigs.len() != weights.len() {
        return Err(RaeddaError::ShapeError(
            "eigenvalue arrays and weights differ in length".into(),
        ));
    }
    let max_e = eigs
        .iter()
        .flat_map(|g| g.iter())
        .cloned()
        .fold(0.0_f64, f64::max);
    if max_e <= 0.0 {
        return Err(RaeddaError::DegenerateCovariance(
            "all eigenvalues are zero".into(),
        ));
    }
    let floor = EIG_FLOOR_REL * max_e;
    let floored: Vec<Vec<f64>> = eigs
        .iter()
        .map(|g| g.iter().map(|&e| e.max(floor)).collect())
        .collect();
    let min_e = floored
        .iter()
        .flat_map(|g| g.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if max_e / min_e <= c * (1.0 + RATIO_SLACK) {
        return Ok(eigs.to_vec());
    }

    let m_star = optimal_clamp_level(&floored, weights, c);
    Ok(floored
        .iter()
        .map(|g| g.iter().map(|&e| e.clamp(m_star, c * m_star)).collect())
        .collect())
}

/// Finds the clamp level minimizing the truncation objective by scanning the
/// finite candidate set `{e, e/c}` plus the stationary point inside each
/// induced interval.
fn optimal_clamp_level(eigs: &[Vec<f64>], weights: &[f64], c: f64) -> f64 {
    let mut breakpoints: Vec<f64> = Vec::new();
    for g in eigs {
        for &e in g {
            breakpoints.push(e);
            breakpoints.push(e / c);
        }
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();

    let mut candidates = breakpoints.clone();
    for pair in breakpoints.windows(2) {
        let mid = 0.5 * (pair[0] + pair[1]);
        // within this interval the floored/capped classification is fixed;
        // the stationary point of the objective is a weighted mean
        let mut num = 0.0;
        let mut den = 0.0;
        for (g, &w) in eigs.iter().zip(weights) {
            for &e in g {
                if e <= mid {
                    num += w * e;
                    den += w;
                } else if e >= c * mid {
                    num += w * e / c;
                    den += w;
                }
            }
        }
        if den > 0.0 {
            candidates.push((num / den).clamp(pair[0], pair[1]));
        }
    }

    let mut best = (f64::INFINITY, breakpoints[0]);
    for &m in &candidates {
        if !(m > 0.0) {
            continue;
        }
        let obj = truncation_objective(eigs, weights, m, c);
        if obj < best.0 {
            best = (obj, m);
        }
    }
    best.1
}

/// Cross-group sharing pattern of the eigenvalues handed to
/// [`solve_patterned_eigenvalues`].
#[derive(Debug, Clone)]
pub enum EigenPattern {
    /// `e_{g,l}` all free (VVI / VVE / VVV).
    Free,
    /// Spherical per group: `e_{g,l} = λ_g` (VII).
    Spherical,
    /// `e_{g,l} = λ_g · a_l` with a common det-1 shape (VEI / VEE / VEV).
    /// `fixed_shape` pins the shape (discovery phase inherits it).
    CommonShape { fixed_shape: Option<DVector<f64>> },
    /// `e_{g,l} = λ · a_{g,l}` with a common volume and per-group det-1
    /// shapes (EVI / EVE / EVV). `fixed_volume` pins λ (discovery phase).
    CommonVolume { fixed_volume: Option<f64> },
}

/// Constrained weighted ML estimate of patterned eigenvalues.
///
/// `wdiag[g]` holds the rotated scatter diagonal of group `g` (the sample
/// cross-products along the current orientation axes) and `n[g]` the
/// effective group size. Minimizes
/// `Σ_g Σ_l (n_g log e_{g,l} + w_{g,l}/e_{g,l})` within the pattern, subject
/// to the ratio bound `c` when given.
pub fn solve_patterned_eigenvalues(
    wdiag: &[DVector<f64>],
    n: &[f64],
    pattern: &EigenPattern,
    c: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    if wdiag.is_empty() {
        return Err(RaeddaError::EmptyInput("no scatter diagonals".into()));
    }
    let p = wdiag[0].len();
    let max_w = wdiag
        .iter()
        .flat_map(|g| g.iter())
        .cloned()
        .fold(0.0_f64, f64::max);
    if max_w <= 0.0 {
        return Err(RaeddaError::DegenerateCovariance(
            "all scatter diagonals are zero".into(),
        ));
    }
    let floor = EIG_FLOOR_REL * max_w;
    let w: Vec<DVector<f64>> = wdiag.iter().map(|g| g.map(|x| x.max(floor))).collect();

    let unconstrained = unconstrained_pattern_solution(&w, n, pattern)?;
    let feasible = match c {
        None => true,
        Some(c) => {
            let (max_e, min_e) = min_max(&unconstrained);
            max_e / min_e <= c * (1.0 + RATIO_SLACK)
        }
    };
    if feasible {
        return Ok(unconstrained);
    }
    let c = c.unwrap();
    if c < 1.0 {
        return Err(RaeddaError::InvalidConstraint(c));
    }

    match pattern {
        EigenPattern::Free => {
            let sample: Vec<Vec<f64>> = w
                .iter()
                .zip(n)
                .map(|(g, &ng)| g.iter().map(|&x| x / ng).collect())
                .collect();
            let truncated = constrain_eigenvalues(&sample, n, c)?;
            Ok(truncated
                .into_iter()
                .map(|g| DVector::from_vec(g))
                .collect())
        }
        EigenPattern::Spherical => {
            let sample: Vec<Vec<f64>> = w
                .iter()
                .zip(n)
                .map(|(g, &ng)| vec![g.sum() / (p as f64 * ng); p])
                .collect();
            let truncated = constrain_eigenvalues(&sample, n, c)?;
            Ok(truncated
                .into_iter()
                .map(|g| DVector::from_vec(g))
                .collect())
        }
        EigenPattern::CommonShape {
            fixed_shape: Some(shape),
        } => {
            // with the shape frozen the volumes solve a spherical-style
            // clamp under an adjusted ratio budget
            let shape_ratio = shape.max() / shape.min();
            let c_eff = (c / shape_ratio).max(1.0);
            let sample: Vec<Vec<f64>> = w
                .iter()
                .zip(n)
                .map(|(g, &ng)| {
                    let lam = g
                        .iter()
                        .zip(shape.iter())
                        .map(|(&wv, &a)| wv / a)
                        .sum::<f64>()
                        / (p as f64 * ng);
                    vec![lam; p]
                })
                .collect();
            let truncated = constrain_eigenvalues(&sample, n, c_eff)?;
            Ok(truncated
                .iter()
                .map(|g| DVector::from_iterator(p, shape.iter().map(|&a| a * g[0])))
                .collect())
        }
        EigenPattern::CommonShape { fixed_shape: None }
        | EigenPattern::CommonVolume { .. } => {
            barrier_newton(&w, n, pattern, c, &unconstrained)
        }
    }
}

fn min_max(eigs: &[DVector<f64>]) -> (f64, f64) {
    let mut max_e = f64::NEG_INFINITY;
    let mut min_e = f64::INFINITY;
    for g in eigs {
        for &e in g.iter() {
            max_e = max_e.max(e);
            min_e = min_e.min(e);
        }
    }
    (max_e, min_e)
}

/// Unconstrained weighted ML solution within the pattern.
fn unconstrained_pattern_solution(
    w: &[DVector<f64>],
    n: &[f64],
    pattern: &EigenPattern,
) -> Result<Vec<DVector<f64>>> {
    let groups = w.len();
    let p = w[0].len();
    match pattern {
        EigenPattern::Free => Ok(w.iter().zip(n).map(|(g, &ng)| g.map(|x| x / ng)).collect()),
        EigenPattern::Spherical => Ok(w
            .iter()
            .zip(n)
            .map(|(g, &ng)| DVector::from_element(p, g.sum() / (p as f64 * ng)))
            .collect()),
        EigenPattern::CommonShape { fixed_shape } => {
            let mut shape = match fixed_shape {
                Some(s) => s.clone(),
                None => {
                    let pooled: DVector<f64> =
                        w.iter().fold(DVector::zeros(p), |acc, g| acc + g);
                    normalize_det(&pooled)
                }
            };
            let mut lambdas = vec![1.0; groups];
            for _ in 0..500 {
                let prev = lambdas.clone();
                for g in 0..groups {
                    lambdas[g] = w[g]
                        .iter()
                        .zip(shape.iter())
                        .map(|(&wv, &a)| wv / a)
                        .sum::<f64>()
                        / (p as f64 * n[g]);
                }
                if fixed_shape.is_none() {
                    let mut pooled = DVector::zeros(p);
                    for g in 0..groups {
                        pooled += &w[g] / lambdas[g];
                    }
                    shape = normalize_det(&pooled);
                }
                let delta = lambdas
                    .iter()
                    .zip(&prev)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
                    .fold(0.0_f64, f64::max);
                if delta < 1e-12 {
                    break;
                }
            }
            Ok((0..groups)
                .map(|g| shape.map(|a| a * lambdas[g]))
                .collect())
        }
        EigenPattern::CommonVolume { fixed_volume } => {
            let shapes: Vec<DVector<f64>> = w.iter().map(|g| normalize_det(g)).collect();
            let lambda = match fixed_volume {
                Some(l) => *l,
                None => {
                    let total_n: f64 = n.iter().sum();
                    w.iter()
                        .map(|g| geometric_mean(g))
                        .sum::<f64>()
                        / total_n
                }
            };
            Ok(shapes.iter().map(|s| s.map(|a| a * lambda)).collect())
        }
    }
}

fn geometric_mean(v: &DVector<f64>) -> f64 {
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn normalize_det(v: &DVector<f64>) -> DVector<f64> {
    let gm = geometric_mean(v);
    v.map(|x| x / gm)
}

/// Log-barrier Newton solve of the patterned problem in log-eigenvalue
/// space. The objective `Σ_i (n_i θ_i + w_i e^{-θ_i})` is strictly convex,
/// the pattern is a linear map `θ = T x + t0`, and the ratio bound becomes a
/// shifted box `s ≤ θ_i ≤ s + log c` with `s` a free variable.
fn barrier_newton(
    w: &[DVector<f64>],
    n: &[f64],
    pattern: &EigenPattern,
    c: f64,
    unconstrained: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let groups = w.len();
    let p = w[0].len();
    let total = groups * p;
    let log_c = c.ln();

    // linear parameterization theta = T x + t0
    let (nvars, t_mat, t0) = match pattern {
        EigenPattern::CommonShape { fixed_shape: None } => {
            // x = (u_1..u_G, v_1..v_{p-1}), theta_{g,l} = u_g + v_l, sum v = 0
            let nv = groups + p - 1;
            let mut t = DMatrix::zeros(total, nv);
            for g in 0..groups {
                for l in 0..p {
                    let row = g * p + l;
                    t[(row, g)] = 1.0;
                    if l < p - 1 {
                        t[(row, groups + l)] = 1.0;
                    } else {
                        for k in 0..p - 1 {
                            t[(row, groups + k)] = -1.0;
                        }
                    }
                }
            }
            (nv, t, DVector::zeros(total))
        }
        EigenPattern::CommonVolume { fixed_volume } => {
            // x = (u?, v_{g,1..p-1}), theta_{g,l} = u + v_{g,l}, per-group sum v = 0
            let has_u = fixed_volume.is_none();
            let nv = groups * (p - 1) + usize::from(has_u);
            let mut t = DMatrix::zeros(total, nv);
            let mut t0 = DVector::zeros(total);
            for g in 0..groups {
                for l in 0..p {
                    let row = g * p + l;
                    if has_u {
                        t[(row, 0)] = 1.0;
                    } else {
                        t0[row] = fixed_volume.unwrap().ln();
                    }
                    let base = usize::from(has_u) + g * (p - 1);
                    if l < p - 1 {
                        t[(row, base + l)] = 1.0;
                    } else {
                        for k in 0..p - 1 {
                            t[(row, base + k)] = -1.0;
                        }
                    }
                }
            }
            (nv, t, t0)
        }
        _ => unreachable!("patterns with exact clamp solutions never reach the barrier"),
    };

    // feasible start: shrink the unconstrained log solution toward its mean
    let theta_unc: DVector<f64> = DVector::from_iterator(
        total,
        unconstrained.iter().flat_map(|g| g.iter().map(|e| e.ln())),
    );
    let mean = theta_unc.mean();
    let spread = theta_unc.max() - theta_unc.min();
    let rho = (0.90 * log_c / spread).min(1.0);
    let theta0 = theta_unc.map(|t| mean + rho * (t - mean));
    // recover pattern coordinates of the shrunken point by least squares
    let mut x = t_mat
        .clone()
        .svd(true, true)
        .solve(&(&theta0 - &t0), 1e-12)
        .map_err(|e| RaeddaError::NumericalUnderflow(e.to_string()))?;
    let theta_init = &t_mat * &x + &t0;
    let mut s = 0.5 * (theta_init.max() + theta_init.min() - log_c);

    let weights_flat: Vec<f64> = (0..groups).flat_map(|g| vec![n[g]; p]).collect();
    let w_flat: Vec<f64> = w.iter().flat_map(|g| g.iter().cloned()).collect();

    let eval = |x: &DVector<f64>, s: f64, mu: f64| -> Option<f64> {
        let theta = &t_mat * x + &t0;
        let mut obj = 0.0;
        for i in 0..total {
            let lo = theta[i] - s;
            let hi = s + log_c - theta[i];
            if lo <= 0.0 || hi <= 0.0 {
                return None;
            }
            obj += weights_flat[i] * theta[i] + w_flat[i] * (-theta[i]).exp();
            obj -= mu * (lo.ln() + hi.ln());
        }
        Some(obj)
    };

    let mut mu = 1.0;
    while mu > 1e-12 {
        for _ in 0..80 {
            let theta = &t_mat * &x + &t0;
            // gradient and Hessian in (theta, s), then chain through T
            let mut g_theta = DVector::zeros(total);
            let mut h_theta = DVector::zeros(total);
            let mut g_s = 0.0;
            let mut h_ss = 0.0;
            let mut h_theta_s = DVector::zeros(total);
            for i in 0..total {
                let lo = theta[i] - s;
                let hi = s + log_c - theta[i];
                let ex = (-theta[i]).exp();
                g_theta[i] = weights_flat[i] - w_flat[i] * ex - mu * (1.0 / lo - 1.0 / hi);
                h_theta[i] = w_flat[i] * ex + mu * (1.0 / (lo * lo) + 1.0 / (hi * hi));
                g_s += mu * (1.0 / lo - 1.0 / hi);
                h_ss += mu * (1.0 / (lo * lo) + 1.0 / (hi * hi));
                h_theta_s[i] = -mu * (1.0 / (lo * lo) + 1.0 / (hi * hi));
            }
            let grad_x = t_mat.transpose() * &g_theta;
            let mut grad = DVector::zeros(nvars + 1);
            grad.rows_mut(0, nvars).copy_from(&grad_x);
            grad[nvars] = g_s;
            let gnorm = grad.norm();
            if gnorm < 1e-11 {
                break;
            }
            let mut hess = DMatrix::zeros(nvars + 1, nvars + 1);
            let txh = t_mat.transpose() * DMatrix::from_diagonal(&h_theta) * &t_mat;
            hess.view_mut((0, 0), (nvars, nvars)).copy_from(&txh);
            let cross = t_mat.transpose() * &h_theta_s;
            for j in 0..nvars {
                hess[(j, nvars)] = cross[j];
                hess[(nvars, j)] = cross[j];
            }
            hess[(nvars, nvars)] = h_ss;
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => {
                    // fall back to a regularized solve
                    let reg = hess + DMatrix::identity(nvars + 1, nvars + 1) * 1e-10;
                    match reg.cholesky() {
                        Some(ch) => ch.solve(&grad),
                        None => break,
                    }
                }
            };
            let f0 = eval(&x, s, mu).unwrap_or(f64::INFINITY);
            let mut t_step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let x_new = &x - step.rows(0, nvars) * t_step;
                let s_new = s - step[nvars] * t_step;
                if let Some(f_new) = eval(&x_new, s_new, mu) {
                    if f_new <= f0 + 1e-14 * f0.abs().max(1.0) {
                        x = x_new;
                        s = s_new;
                        accepted = true;
                        break;
                    }
                }
                t_step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        mu *= 0.15;
    }

    let theta = &t_mat * &x + &t0;
    Ok((0..groups)
        .map(|g| DVector::from_iterator(p, (0..p).map(|l| theta[g * p + l].exp())))
        .collect())
}
