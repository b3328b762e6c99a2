//! Transductive estimation: robust initialization on labelled data,
//! hidden-class initialization from test-set subsets, and the
//! concentration / expectation / constrained-maximization loop run jointly
//! over training and test observations.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariance::{mstep_covariances_diag, ScatterAccumulator};
use crate::dataset::{check_pair, LabeledDataset, UnlabeledDataset};
use crate::density::{gaussian_log_density, log_sum_exp};
use crate::eigen::EigenDecomposition;
use crate::error::{RaeddaError, Result};
use crate::model::ModelName;
use crate::selection::{rbic, Approach, PenaltySpec};

/// Safety cap on the trimming fixed-point loop inside each robust
/// initialization restart.
const ROBUST_INIT_CAP: usize = 500;
/// RNG stream offset separating hidden-class initialization draws from
/// robust-initialization draws.
const HIDDEN_STREAM_BASE: u64 = 1 << 32;

/// Mixing proportions, means, and decomposed covariances for `E = G + H`
/// groups; the first `G` indices are the observed classes.
#[derive(Debug, Clone)]
pub struct MixtureParameters {
    pub tau: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<EigenDecomposition>,
    pub g: usize,
    pub model: ModelName,
}

impl MixtureParameters {
    pub fn e(&self) -> usize {
        self.tau.len()
    }

    pub fn h(&self) -> usize {
        self.e() - self.g
    }

    pub fn p(&self) -> usize {
        self.mu[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.e();
        if e == 0 || self.mu.len() != e || self.sigma.len() != e || self.g > e {
            return Err(RaeddaError::ShapeError(
                "inconsistent mixture component counts".into(),
            ));
        }
        let sum: f64 = self.tau.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || self.tau.iter().any(|&t| t <= 0.0) {
            return Err(RaeddaError::ShapeError(
                "mixing proportions must be a positive simplex vector".into(),
            ));
        }
        for s in &self.sigma {
            if s.lambda <= 0.0 || s.shape.iter().any(|&a| a <= 0.0) {
                return Err(RaeddaError::DegenerateCovariance(
                    "non-positive covariance eigenvalue".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-observation inclusion flags produced by the concentration step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimmingIndicators {
    pub zeta: Vec<bool>,
    pub phi: Vec<bool>,
}

impl TrimmingIndicators {
    pub fn kept_train(&self) -> usize {
        self.zeta.iter().filter(|&&z| z).count()
    }

    pub fn kept_test(&self) -> usize {
        self.phi.iter().filter(|&&f| f).count()
    }
}

/// Eigenvalue-ratio constraint: explicit, or a multiplier on the ratio
/// observed across the per-class sample covariances of the training rows
/// retained by the robust initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSpec {
    Fixed(f64),
    Auto { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub c: ConstraintSpec,
    pub n_init: usize,
    pub n_init_hidden: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha_l: 0.0,
            alpha_u: 0.0,
            c: ConstraintSpec::Fixed(1e12),
            n_init: 30,
            n_init_hidden: 30,
            max_iter: 200,
            epsilon: 1e-5,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |a: f64| (0.0..0.5).contains(&a);
        if !frac_ok(self.alpha_l) || !frac_ok(self.alpha_u) {
            return Err(RaeddaError::ConfigError(
                "trimming fractions must lie in [0, 0.5)".into(),
            ));
        }
        match self.c {
            ConstraintSpec::Fixed(c) if c < 1.0 => {
                return Err(RaeddaError::InvalidConstraint(c))
            }
            ConstraintSpec::Auto { multiplier } if multiplier < 1.0 => {
                return Err(RaeddaError::InvalidConstraint(multiplier))
            }
            _ => {}
        }
        if self.epsilon <= 0.0 || self.n_init == 0 || self.max_iter == 0 {
            return Err(RaeddaError::ConfigError(
                "epsilon > 0, n_init >= 1 and max_iter >= 1 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    /// false when the shared-orientation inner solver hit its cap in some
    /// M-step of the returned run
    pub inner_solvers_converged: bool,
    pub failed_restarts: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixtureParameters,
    pub trimming: TrimmingIndicators,
    /// test-unit responsibilities, M×E (rows for trimmed units are still
    /// populated so MAP labels exist)
    pub posteriors: DMatrix<f64>,
    /// MAP class index per test unit
    pub classification: Vec<usize>,
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
    /// resolved constraint actually enforced
    pub c: f64,
    pub rbic: f64,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// Number of rows kept by trimming: `⌈n(1−α)⌉`.
pub fn kept_count(n: usize, alpha: f64) -> usize {
    (n as f64 * (1.0 - alpha)).ceil() as usize
}

fn labeled_log_densities(params: &MixtureParameters, labeled: &LabeledDataset) -> Vec<f64> {
    (0..labeled.n())
        .map(|i| {
            let g = labeled.labels[i];
            gaussian_log_density(&labeled.row(i), &params.mu[g], &params.sigma[g])
        })
        .collect()
}

fn mixture_log_densities(params: &MixtureParameters, unlabeled: &UnlabeledDataset) -> Vec<f64> {
    let e = params.e();
    (0..unlabeled.m())
        .map(|i| {
            let y = unlabeled.row(i);
            let terms: Vec<f64> = (0..e)
                .map(|g| {
                    params.tau[g].ln() + gaussian_log_density(&y, &params.mu[g], &params.sigma[g])
                })
                .collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// Marks the `discard` rows with smallest score as excluded, breaking ties
/// by ascending row index.
fn trim_lowest(scores: &[f64], discard: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; scores.len()];
    for &i in order.iter().take(discard) {
        keep[i] = false;
    }
    keep
}

/// Trimmed observed-data log-likelihood: labelled own-class terms plus
/// unlabelled mixture terms, both restricted to untrimmed rows.
pub fn trimmed_observed_loglik(
    params: &MixtureParameters,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    trimming: &TrimmingIndicators,
) -> Result<f64> {
    check_pair(labeled, unlabeled)?;
    if params.p() != labeled.p() {
        return Err(RaeddaError::ShapeError(
            "parameter dimension does not match data".into(),
        ));
    }
    if trimming.zeta.len() != labeled.n() || trimming.phi.len() != unlabeled.m() {
        return Err(RaeddaError::ShapeError(
            "trimming indicator lengths do not match data".into(),
        ));
    }
    let mut ll = 0.0;
    for i in 0..labeled.n() {
        if trimming.zeta[i] {
            let g = labeled.labels[i];
            ll += params.tau[g].ln()
                + gaussian_log_density(&labeled.row(i), &params.mu[g], &params.sigma[g]);
        }
    }
    let mix = mixture_log_densities(params, unlabeled);
    for (i, &d) in mix.iter().enumerate() {
        if trimming.phi[i] {
            ll += d;
        }
    }
    Ok(ll)
}

/// Flags the ⌊Nα_l⌋ training rows of smallest own-class density and the
/// ⌊Mα_u⌋ test rows of smallest mixture density.
pub fn concentration_step(
    params: &MixtureParameters,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    alpha_l: f64,
    alpha_u: f64,
) -> TrimmingIndicators {
    let discard_train = labeled.n() - kept_count(labeled.n(), alpha_l);
    let discard_test = unlabeled.m() - kept_count(unlabeled.m(), alpha_u);
    let zeta = trim_lowest(&labeled_log_densities(params, labeled), discard_train);
    let phi = trim_lowest(&mixture_log_densities(params, unlabeled), discard_test);
    TrimmingIndicators { zeta, phi }
}

/// Posterior responsibilities of every test row under the current
/// parameters (M×E). Rows are normalized regardless of trimming so MAP
/// labels exist for trimmed units too.
pub fn e_step(
    params: &MixtureParameters,
    unlabeled: &UnlabeledDataset,
    _phi: &[bool],
) -> Result<DMatrix<f64>> {
    let e = params.e();
    let m = unlabeled.m();
    let mut out = DMatrix::zeros(m, e);
    for i in 0..m {
        let y = unlabeled.row(i);
        let mut terms: Vec<f64> = (0..e)
            .map(|g| {
                params.tau[g].ln() + gaussian_log_density(&y, &params.mu[g], &params.sigma[g])
            })
            .collect();
        let z = log_sum_exp(&terms);
        if !z.is_finite() {
            return Err(RaeddaError::NumericalUnderflow("all component densities underflowed for a test row".into()));
        }
        for t in terms.iter_mut() {
            *t = (*t - z).exp();
        }
        for g in 0..e {
            out[(i, g)] = terms[g];
        }
    }
    Ok(out)
}

/// Weighted mean and scatter of the selected rows.
fn weighted_moments(
    rows: &[(DVector<f64>, f64)],
    p: usize,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n: f64 = rows.iter().map(|(_, w)| w).sum();
    let mut mean = DVector::zeros(p);
    for (x, w) in rows {
        mean += x * *w;
    }
    if n > 0.0 {
        mean /= n;
    }
    let mut scatter = DMatrix::zeros(p, p);
    for (x, w) in rows {
        let d = x - &mean;
        scatter += &d * d.transpose() * *w;
    }
    (n, mean, scatter)
}

/// Joint M-step over labelled indicator weights and test responsibilities.
#[allow(clippy::too_many_arguments)]
pub fn m_step(
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    zeta: &[bool],
    phi: &[bool],
    posteriors: &DMatrix<f64>,
    model: ModelName,
    c: f64,
    warm_start: Option<&MixtureParameters>,
) -> Result<(MixtureParameters, bool)> {
    let e = posteriors.ncols();
    let g_obs = labeled.g;
    let p = labeled.p();
    let denom = (zeta.iter().filter(|&&z| z).count() + phi.iter().filter(|&&f| f).count()) as f64;

    let mut tau = vec![0.0; e];
    let mut mu = Vec::with_capacity(e);
    let mut w = Vec::with_capacity(e);
    let mut n = Vec::with_capacity(e);
    for gi in 0..e {
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        if gi < g_obs {
            for i in 0..labeled.n() {
                if zeta[i] && labeled.labels[i] == gi {
                    rows.push((labeled.row(i), 1.0));
                }
            }
        }
        for i in 0..unlabeled.m() {
            if phi[i] && posteriors[(i, gi)] > 0.0 {
                rows.push((unlabeled.row(i), posteriors[(i, gi)]));
            }
        }
        let (ng, mean, scatter) = weighted_moments(&rows, p);
        tau[gi] = ng / denom;
        mu.push(mean);
        w.push(scatter);
        n.push(ng);
    }
    let scatter = ScatterAccumulator { w, n };
    let warm = warm_start.map(|ws| ws.sigma.as_slice());
    let (sigma, inner_converged) = mstep_covariances_diag(model, &scatter, c, warm)?;
    Ok((
        MixtureParameters {
            tau,
            mu,
            sigma,
            g: g_obs,
            model,
        },
        inner_converged,
    ))
}

/// Aitken acceleration stopping rule on three consecutive log-likelihood
/// values.
pub fn aitken_converged(l_prev: f64, l_curr: f64, l_next: f64, epsilon: f64) -> bool {
    let denom = l_curr - l_prev;
    let step = l_next - l_curr;
    if denom.abs() < 1e-12 {
        return step.abs() < epsilon;
    }
    let a = step / denom;
    if a >= 1.0 {
        return step.abs() < epsilon;
    }
    let l_inf = l_curr + step / (1.0 - a);
    (l_inf - l_curr).abs() < epsilon
}

fn subset_moments(
    rows: &[DVector<f64>],
    p: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let weighted: Vec<(DVector<f64>, f64)> = rows.iter().map(|r| (r.clone(), 1.0)).collect();
    let (n, mean, scatter) = weighted_moments(&weighted, p);
    (mean, scatter / n)
}

/// Robust initialization on the labelled data: per-class random
/// `(p+1)`-subset moments iterated to a trimming fixed point, best of
/// `n_init` restarts by labelled trimmed log-likelihood.
pub fn robust_init_known(
    labeled: &LabeledDataset,
    model: ModelName,
    alpha_l: f64,
    n_init: usize,
    seed: u64,
) -> Result<(MixtureParameters, Vec<bool>, usize)> {
    let g_obs = labeled.g;
    let p = labeled.p();
    let n_rows = labeled.n();
    let kept = kept_count(n_rows, alpha_l);
    let discard = n_rows - kept;
    let members: Vec<Vec<usize>> = (0..g_obs)
        .map(|gi| (0..n_rows).filter(|&i| labeled.labels[i] == gi).collect())
        .collect();

    let mut best: Option<(f64, MixtureParameters, Vec<bool>)> = None;
    let mut failed = 0usize;
    for restart in 0..n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        match robust_init_once(labeled, model, &members, discard, kept, &mut rng) {
            Ok((obj, params, zeta)) => {
                let better = match &best {
                    Some((b, _, _)) => obj > *b,
                    None => true,
                };
                if better {
                    best = Some((obj, params, zeta));
                }
            }
            Err(_) => failed += 1,
        }
        let _ = p;
    }
    match best {
        Some((_, params, zeta)) => Ok((params, zeta, failed)),
        None => Err(RaeddaError::InitializationFailure("all restarts failed".into())),
    }
}

fn robust_init_once(
    labeled: &LabeledDataset,
    model: ModelName,
    members: &[Vec<usize>],
    discard: usize,
    kept: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, MixtureParameters, Vec<bool>)> {
    let g_obs = labeled.g;
    let p = labeled.p();
    let n_rows = labeled.n();

    // moments of one random (p+1)-subset per class
    let mut mu = Vec::with_capacity(g_obs);
    let mut w = Vec::with_capacity(g_obs);
    let mut n = Vec::with_capacity(g_obs);
    for m in members {
        let idx = sample(rng, m.len(), p + 1);
        let rows: Vec<DVector<f64>> = idx.iter().map(|j| labeled.row(m[j])).collect();
        let (mean, cov) = subset_moments(&rows, p);
        mu.push(mean);
        w.push(cov * (p + 1) as f64);
        n.push((p + 1) as f64);
    }
    let sigma = mstep_covariances_diag(model, &ScatterAccumulator { w, n }, 1e15, None)?.0;
    let mut params = MixtureParameters {
        tau: vec![1.0 / g_obs as f64; g_obs],
        mu,
        sigma,
        g: g_obs,
        model,
    };

    let mut zeta = vec![true; n_rows];
    for _ in 0..ROBUST_INIT_CAP {
        let dens = labeled_log_densities(&params, labeled);
        let new_zeta = trim_lowest(&dens, discard);
        let stable = new_zeta == zeta;
        zeta = new_zeta;

        // refit on the retained rows
        let mut mu = Vec::with_capacity(g_obs);
        let mut w = Vec::with_capacity(g_obs);
        let mut n = Vec::with_capacity(g_obs);
        let mut tau = Vec::with_capacity(g_obs);
        for gi in 0..g_obs {
            let rows: Vec<(DVector<f64>, f64)> = (0..n_rows)
                .filter(|&i| zeta[i] && labeled.labels[i] == gi)
                .map(|i| (labeled.row(i), 1.0))
                .collect();
            if rows.is_empty() {
                return Err(RaeddaError::EmptyComponent { component: gi });
            }
            let (ng, mean, scatter) = weighted_moments(&rows, p);
            tau.push(ng / kept as f64);
            mu.push(mean);
            w.push(scatter);
            n.push(ng);
        }
        let sigma = mstep_covariances_diag(model, &ScatterAccumulator { w, n }, 1e15, None)?.0;
        params = MixtureParameters {
            tau,
            mu,
            sigma,
            g: g_obs,
            model,
        };
        if stable {
            break;
        }
    }

    let dens = labeled_log_densities(&params, labeled);
    let obj: f64 = (0..n_rows)
        .filter(|&i| zeta[i])
        .map(|i| params.tau[labeled.labels[i]].ln() + dens[i])
        .sum();
    Ok((obj, params, zeta))
}

/// Ratio of the largest to the smallest covariance eigenvalue across the
/// known groups; the reference for auto-scaled constraints.
pub fn known_group_eigen_ratio(params: &MixtureParameters) -> f64 {
    let known = &params.sigma[..params.g];
    crate::eigen::eigen_ratio_decomps(known).unwrap_or(1.0)
}

/// Eigenvalue ratio across the unpatterned per-class sample covariances of
/// the retained training rows. This is the data-driven reference for
/// auto-scaled constraints: it reflects the observed group scatters
/// themselves, so every candidate parameterization resolves the same bound
/// and penalty comparisons across models stay on a common scale.
pub fn scatter_eigen_ratio(labeled: &LabeledDataset, zeta: &[bool]) -> f64 {
    let p = labeled.p();
    let mut decomps = Vec::with_capacity(labeled.g);
    for gi in 0..labeled.g {
        let rows: Vec<(DVector<f64>, f64)> = (0..labeled.n())
            .filter(|&i| zeta[i] && labeled.labels[i] == gi)
            .map(|i| (labeled.row(i), 1.0))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let (ng, _, scatter) = weighted_moments(&rows, p);
        match crate::eigen::decompose(&(scatter / ng)) {
            Ok(d) => decomps.push(d),
            Err(_) => return 1.0,
        }
    }
    crate::eigen::eigen_ratio_decomps(&decomps).unwrap_or(1.0)
}

/// Resolves a [`ConstraintSpec`] into a concrete ratio bound, scaling the
/// auto mode by `reference_ratio`.
pub fn resolve_constraint(c: ConstraintSpec, reference_ratio: f64) -> f64 {
    match c {
        ConstraintSpec::Fixed(v) => v,
        ConstraintSpec::Auto { multiplier } => (multiplier * reference_ratio).max(1.0),
    }
}

/// Adds `h` hidden classes initialized from random `(p+1)`-subsets of the
/// test rows, rescaling the mixing proportions so the result sums to one.
pub fn init_hidden(
    params_known: &MixtureParameters,
    unlabeled: &UnlabeledDataset,
    h: usize,
    model: ModelName,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureParameters> {
    if h == 0 {
        return Ok(params_known.clone());
    }
    let p = unlabeled.p();
    if unlabeled.m() < h * (p + 1) {
        return Err(RaeddaError::InitializationFailure("not enough test rows for hidden-class subsets".into()));
    }
    let g_obs = params_known.e();
    let e = g_obs + h;

    let mut mu = params_known.mu.clone();
    let mut sigma = params_known.sigma.clone();
    let mut hidden_eigs: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut hidden_decomps = Vec::with_capacity(h);
    for _ in 0..h {
        let idx = sample(rng, unlabeled.m(), p + 1);
        let rows: Vec<DVector<f64>> = idx.iter().map(|j| unlabeled.row(j)).collect();
        let (mean, cov) = subset_moments(&rows, p);
        let dec = crate::eigen::decompose(&cov).or_else(|_| {
            // a degenerate subset still needs a usable covariance: fall
            // back to an inflated spherical one
            Ok::<_, RaeddaError>(EigenDecomposition::identity(p))
        })?;
        mu.push(mean);
        hidden_eigs.push(dec.eigenvalues().iter().copied().collect());
        hidden_decomps.push(dec);
    }
    // constraint enforcement across the initial hidden covariances
    let weights = vec![1.0; h];
    let constrained = crate::constraint::constrain_eigenvalues(&hidden_eigs, &weights, c)?;
    for (dec, eigs) in hidden_decomps.iter_mut().zip(&constrained) {
        let v = DVector::from_vec(eigs.clone());
        *dec = EigenDecomposition::from_eigen_pairs(&v, &dec.orientation)?;
        sigma.push(dec.clone());
    }

    let u: Vec<f64> = (0..h).map(|_| rng.gen::<f64>()).collect();
    let u_sum: f64 = u.iter().sum();
    let mut tau: Vec<f64> = params_known
        .tau
        .iter()
        .map(|t| t * g_obs as f64 / e as f64)
        .collect();
    for &ui in &u {
        tau.push(ui / u_sum * h as f64 / e as f64);
    }

    Ok(MixtureParameters {
        tau,
        mu,
        sigma,
        g: params_known.g,
        model,
    })
}

struct EmRun {
    params: MixtureParameters,
    trimming: TrimmingIndicators,
    posteriors: DMatrix<f64>,
    trace: Vec<f64>,
    converged: bool,
    inner_converged: bool,
}

/// One EM run from the given starting parameters to convergence or the
/// iteration cap.
fn em_loop(
    mut params: MixtureParameters,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    config: &FitConfig,
    c: f64,
) -> Result<EmRun> {
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut inner_converged = true;
    for _ in 0..config.max_iter {
        let trimming =
            concentration_step(&params, labeled, unlabeled, config.alpha_l, config.alpha_u);
        let ll = trimmed_observed_loglik(&params, labeled, unlabeled, &trimming)?;
        trace.push(ll);
        let k = trace.len();
        if k >= 3 && aitken_converged(trace[k - 3], trace[k - 2], trace[k - 1], config.epsilon)
        {
            converged = true;
            break;
        }
        let posteriors = e_step(&params, unlabeled, &trimming.phi)?;
        let (next, inner_ok) = m_step(
            labeled,
            unlabeled,
            &trimming.zeta,
            &trimming.phi,
            &posteriors,
            params.model,
            c,
            Some(&params),
        )?;
        inner_converged &= inner_ok;
        params = next;
    }
    let trimming =
        concentration_step(&params, labeled, unlabeled, config.alpha_l, config.alpha_u);
    let ll = trimmed_observed_loglik(&params, labeled, unlabeled, &trimming)?;
    if trace.last() != Some(&ll) {
        trace.push(ll);
    }
    let posteriors = e_step(&params, unlabeled, &trimming.phi)?;
    Ok(EmRun {
        params,
        trimming,
        posteriors,
        trace,
        converged,
        inner_converged,
    })
}

fn map_labels(posteriors: &DMatrix<f64>) -> Vec<usize> {
    (0..posteriors.nrows())
        .map(|i| {
            let row = posteriors.row(i);
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Full transductive fit: robust initialization, hidden-class restarts,
/// and the trimmed EM loop, keeping the restart with the best trimmed
/// log-likelihood.
pub fn fit_transductive(
    config: &FitConfig,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    e: usize,
    model: ModelName,
) -> Result<FitResult> {
    config.validate()?;
    check_pair(labeled, unlabeled)?;
    if e < labeled.g {
        return Err(RaeddaError::ConfigError(format!(
            "requested {e} classes but {} are observed",
            labeled.g
        )));
    }
    let h = e - labeled.g;

    let (params_known, zeta0, failed_init) =
        robust_init_known(labeled, model, config.alpha_l, config.n_init, config.seed)?;
    let c = resolve_constraint(config.c, scatter_eigen_ratio(labeled, &zeta0));

    let restarts = if h == 0 { 1 } else { config.n_init_hidden };
    let mut best: Option<(f64, EmRun)> = None;
    let mut failed = failed_init;
    for trial in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(HIDDEN_STREAM_BASE + trial as u64);
        let run = init_hidden(&params_known, unlabeled, h, model, c, &mut rng)
            .and_then(|start| em_loop(start, labeled, unlabeled, config, c));
        match run {
            Ok(r) => {
                let obj = *r.trace.last().unwrap();
                let better = match &best {
                    Some((b, _)) => obj > *b,
                    None => true,
                };
                if better {
                    best = Some((obj, r));
                }
            }
            Err(_) => failed += 1,
        }
    }
    let (loglik, run) = best.ok_or(RaeddaError::InitializationFailure("all restarts failed".into()))?;

    let n_star = kept_count(labeled.n(), config.alpha_l) + kept_count(unlabeled.m(), config.alpha_u);
    let spec = PenaltySpec::new(
        model,
        e,
        labeled.g,
        labeled.p(),
        c,
        n_star,
        Approach::Transductive,
    )?;
    let classification = map_labels(&run.posteriors);
    Ok(FitResult {
        rbic: rbic(loglik, spec.v(), n_star),
        classification,
        params: run.params,
        trimming: run.trimming,
        posteriors: run.posteriors,
        loglik_trace: run.trace,
        loglik,
        c,
        converged: run.converged,
        diagnostics: FitDiagnostics {
            inner_solvers_converged: run.inner_converged,
            failed_restarts: failed,
            notes: Vec::new(),
        },
    })
}

/// Outcome for one trimmed training unit after refitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingVerdict {
    /// row should carry this (zero-based) class index instead
    Reassigned(usize),
    Outlier,
}

/// Post-fit handling of trimmed training units: provisional MAP label,
/// then comparison of the relabelled density against the trimming-level
/// quantile of the final training-density distribution.
pub fn reassign_trimmed_training(
    fit: &FitResult,
    labeled: &LabeledDataset,
    alpha_l: f64,
) -> Vec<(usize, TrainingVerdict)> {
    let params = &fit.params;
    let n_rows = labeled.n();
    let discard = n_rows - kept_count(n_rows, alpha_l);
    if discard == 0 {
        return Vec::new();
    }
    let mut dens = labeled_log_densities(params, labeled);
    dens.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // largest trimmed own-label density: the cut level of the final
    // concentration step
    let threshold = dens[discard - 1];

    let e = params.e();
    let mut out = Vec::new();
    for i in 0..n_rows {
        if fit.trimming.zeta[i] {
            continue;
        }
        let x = labeled.row(i);
        let scores: Vec<f64> = (0..e)
            .map(|g| {
                params.tau[g].ln() + gaussian_log_density(&x, &params.mu[g], &params.sigma[g])
            })
            .collect();
        let map = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        let relabelled = gaussian_log_density(&x, &params.mu[map], &params.sigma[map]);
        let verdict = if relabelled > threshold {
            TrainingVerdict::Reassigned(map)
        } else {
            TrainingVerdict::Outlier
        };
        out.push((i, verdict));
    }
    out
}
