//! Multivariate Gaussian log-densities evaluated through eigenvalue
//! decompositions, plus log-domain mixture utilities.

use nalgebra::DVector;

use crate::eigen::EigenDecomposition;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of `x` under a Gaussian with the given mean and
/// decomposed covariance.
pub fn gaussian_log_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &EigenDecomposition,
) -> f64 {
    let p = x.len() as f64;
    -0.5 * (p * LN_2PI + cov.log_det() + cov.mahalanobis_sq(&(x - mean)))
}

/// `log Σ exp(v_i)` computed stably; `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place to probabilities summing to one.
/// Returns the normalizing constant `log Σ exp`.
pub fn normalize_log_weights(v: &mut [f64]) -> f64 {
    let z = log_sum_exp(v);
    if z.is_finite() {
        for x in v.iter_mut() {
            *x = (*x - z).exp();
        }
    } else {
        // all components underflowed: fall back to a uniform posterior
        let u = 1.0 / v.len() as f64;
        for x in v.iter_mut() {
            *x = u;
        }
    }
    z
}
