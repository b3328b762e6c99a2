//! Two-phase inductive estimation: a robust supervised learning phase on
//! the labelled data, then a discovery phase on an augmented test set that
//! estimates hidden-class parameters only, with known-class means and
//! covariances frozen.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::covariance::{mstep_discovery, FixedComponents, ScatterAccumulator};
use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::density::{gaussian_log_density, log_sum_exp};
use crate::error::{RaeddaError, Result};
use crate::model::ModelName;
use crate::selection::{rbic, Approach, PenaltySpec};
use crate::transductive::{
    aitken_converged, e_step, init_hidden, kept_count, scatter_eigen_ratio,
    robust_init_known, ConstraintSpec, FitConfig, FitDiagnostics, FitResult,
    MixtureParameters, TrimmingIndicators,
};

/// RNG stream offset for discovery-phase hidden-class initialization.
const DISCOVERY_STREAM_BASE: u64 = 2 << 32;

/// Frozen output of the learning phase; sufficient to classify and to run
/// discovery after the training set is discarded.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub params_bar: MixtureParameters,
    pub zeta: Vec<bool>,
    pub model: ModelName,
    /// eigenvalue ratio across the learned group covariances
    pub c_tilde: f64,
    /// sorted own-label training log-densities at the learned parameters,
    /// for quantile-based outlier flagging
    pub density_quantiles: Vec<f64>,
}

/// Origin of a row in the augmented test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowProvenance {
    Test { index: usize },
    Recovered { train_index: usize, label: usize },
}

/// Test set extended with the training rows trimmed by the learning phase.
#[derive(Debug, Clone)]
pub struct AugmentedTestSet {
    pub data: UnlabeledDataset,
    pub provenance: Vec<RowProvenance>,
}

impl AugmentedTestSet {
    pub fn m_star(&self) -> usize {
        self.data.m()
    }
}

/// Robust supervised learning phase: the trimmed fixed-point fit on the
/// labelled data, augmented with the constraint reference ratio and the
/// training-density quantile ladder.
pub fn fit_learning_phase(
    labeled: &LabeledDataset,
    model: ModelName,
    alpha_l: f64,
    n_init: usize,
    seed: u64,
) -> Result<LearnedModel> {
    let (params_bar, zeta, _) = robust_init_known(labeled, model, alpha_l, n_init, seed)?;
    let c_tilde = scatter_eigen_ratio(labeled, &zeta).max(1.0);
    let mut density_quantiles: Vec<f64> = (0..labeled.n())
        .map(|i| {
            let g = labeled.labels[i];
            gaussian_log_density(&labeled.row(i), &params_bar.mu[g], &params_bar.sigma[g])
        })
        .collect();
    density_quantiles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(LearnedModel {
        params_bar,
        zeta,
        model,
        c_tilde,
        density_quantiles,
    })
}

/// `Y* = Y ∪ {trimmed training rows}`: original test rows first, recovered
/// rows appended in ascending training index.
pub fn build_augmented_test(
    labeled: &LabeledDataset,
    zeta: &[bool],
    unlabeled: &UnlabeledDataset,
) -> Result<AugmentedTestSet> {
    let p = unlabeled.p();
    let recovered: Vec<usize> = (0..labeled.n()).filter(|&i| !zeta[i]).collect();
    let m_star = unlabeled.m() + recovered.len();
    let mut rows = DMatrix::zeros(m_star, p);
    let mut provenance = Vec::with_capacity(m_star);
    for i in 0..unlabeled.m() {
        rows.set_row(i, &unlabeled.y.row(i));
        provenance.push(RowProvenance::Test { index: i });
    }
    for (k, &i) in recovered.iter().enumerate() {
        rows.set_row(unlabeled.m() + k, &labeled.x.row(i));
        provenance.push(RowProvenance::Recovered {
            train_index: i,
            label: labeled.labels[i],
        });
    }
    Ok(AugmentedTestSet {
        data: UnlabeledDataset::new(rows)?,
        provenance,
    })
}

/// Mixing-proportion update of the discovery M-step: hidden groups take
/// their responsibility shares, known groups share the remainder in the
/// learned ratios.
pub fn discovery_tau_update(tau_bar: &[f64], m_star_hidden: &[f64]) -> Vec<f64> {
    let hidden_mass: f64 = m_star_hidden.iter().sum();
    let mut tau: Vec<f64> = tau_bar.iter().map(|t| t * (1.0 - hidden_mass)).collect();
    tau.extend_from_slice(m_star_hidden);
    tau
}

fn mixture_log_densities(params: &MixtureParameters, y: &UnlabeledDataset) -> Vec<f64> {
    let e = params.e();
    (0..y.m())
        .map(|i| {
            let row = y.row(i);
            let terms: Vec<f64> = (0..e)
                .map(|g| {
                    params.tau[g].ln()
                        + gaussian_log_density(&row, &params.mu[g], &params.sigma[g])
                })
                .collect();
            log_sum_exp(&terms)
        })
        .collect()
}

fn trim_lowest(scores: &[f64], discard: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut keep = vec![true; scores.len()];
    for &i in order.iter().take(discard) {
        keep[i] = false;
    }
    keep
}

struct DiscoveryRun {
    params: MixtureParameters,
    phi: Vec<bool>,
    posteriors: DMatrix<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn discovery_em_once(
    learned: &LearnedModel,
    ystar: &AugmentedTestSet,
    start: MixtureParameters,
    discovery_model: ModelName,
    alpha_u: f64,
    c: f64,
    config: &FitConfig,
) -> Result<DiscoveryRun> {
    let y = &ystar.data;
    let m_star = y.m();
    let kept = kept_count(m_star, alpha_u);
    let discard = m_star - kept;
    let g_obs = learned.params_bar.e();
    let e = start.e();
    let fixed = FixedComponents::from_learned(learned.model, &learned.params_bar.sigma);

    let mut params = start;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iter {
        let dens = mixture_log_densities(&params, y);
        let phi = trim_lowest(&dens, discard);
        let ll: f64 = dens
            .iter()
            .zip(&phi)
            .filter(|(_, &keep)| keep)
            .map(|(d, _)| d)
            .sum();
        // the raw start may sit outside the discovery family (its hidden
        // covariances are not yet projected onto the inherited pattern),
        // so its likelihood is not recorded: the first loop pass projects
        // it and the trace starts from the first in-family parameters
        if iter > 0 {
            trace.push(ll);
        }
        let k = trace.len();
        if k >= 3 && aitken_converged(trace[k - 3], trace[k - 2], trace[k - 1], config.epsilon)
        {
            converged = true;
            break;
        }
        let posteriors = e_step(&params, y, &phi)?;

        // hidden-group responsibility shares and moments on untrimmed rows
        let h = e - g_obs;
        let p = y.p();
        let mut m_star_hidden = vec![0.0; h];
        let mut mu_hidden = vec![DVector::zeros(p); h];
        let mut n_hidden = vec![0.0; h];
        for i in 0..m_star {
            if !phi[i] {
                continue;
            }
            let row = y.row(i);
            for hi in 0..h {
                let w = posteriors[(i, g_obs + hi)];
                n_hidden[hi] += w;
                mu_hidden[hi] += row.clone() * w;
            }
        }
        for hi in 0..h {
            if n_hidden[hi] < 1e-9 {
                return Err(RaeddaError::EmptyComponent {
                    component: g_obs + hi,
                });
            }
            mu_hidden[hi] /= n_hidden[hi];
            m_star_hidden[hi] = n_hidden[hi] / kept as f64;
        }
        let mut w_hidden = vec![DMatrix::zeros(p, p); h];
        for i in 0..m_star {
            if !phi[i] {
                continue;
            }
            let row = y.row(i);
            for hi in 0..h {
                let w = posteriors[(i, g_obs + hi)];
                if w > 0.0 {
                    let d = &row - &mu_hidden[hi];
                    w_hidden[hi] += &d * d.transpose() * w;
                }
            }
        }
        let scatter_hidden = ScatterAccumulator {
            w: w_hidden,
            n: n_hidden,
        };
        let sigma_hidden =
            mstep_discovery(learned.model, discovery_model, &scatter_hidden, &fixed, c)?;

        let tau = discovery_tau_update(&learned.params_bar.tau, &m_star_hidden);
        let mut mu = learned.params_bar.mu.clone();
        mu.extend(mu_hidden);
        let mut sigma = learned.params_bar.sigma.clone();
        sigma.extend(sigma_hidden);
        params = MixtureParameters {
            tau,
            mu,
            sigma,
            g: learned.params_bar.g,
            model: discovery_model,
        };
    }
    let dens = mixture_log_densities(&params, y);
    let phi = trim_lowest(&dens, discard);
    let ll: f64 = dens
        .iter()
        .zip(&phi)
        .filter(|(_, &keep)| keep)
        .map(|(d, _)| d)
        .sum();
    if trace.last() != Some(&ll) {
        trace.push(ll);
    }
    let posteriors = e_step(&params, y, &phi)?;
    Ok(DiscoveryRun {
        params,
        phi,
        posteriors,
        trace,
        converged,
    })
}

/// Discovery-phase EM on the augmented test set: hidden-class parameters
/// estimated, known-class means/covariances frozen, mixing proportions
/// rescaled so known-group ratios stay at their learned values.
pub fn fit_discovery_phase(
    learned: &LearnedModel,
    ystar: &AugmentedTestSet,
    h: usize,
    discovery_model: ModelName,
    alpha_u: f64,
    c: f64,
    config: &FitConfig,
) -> Result<FitResult> {
    if !learned.model.allows_discovery(discovery_model) {
        return Err(RaeddaError::ModelLatticeViolation {
            learning: learned.model.to_string(),
            discovery: discovery_model.to_string(),
        });
    }
    if c < 1.0 {
        return Err(RaeddaError::InvalidConstraint(c));
    }
    let y = &ystar.data;
    let m_star = y.m();
    let g_obs = learned.params_bar.e();
    let e = g_obs + h;
    let kept = kept_count(m_star, alpha_u);

    let (run, failed) = if h == 0 {
        // supervised reduction: frozen parameters, single pass
        let params = MixtureParameters {
            model: discovery_model,
            ..learned.params_bar.clone()
        };
        let dens = mixture_log_densities(&params, y);
        let phi = trim_lowest(&dens, m_star - kept);
        let ll: f64 = dens
            .iter()
            .zip(&phi)
            .filter(|(_, &k)| k)
            .map(|(d, _)| d)
            .sum();
        let posteriors = e_step(&params, y, &phi)?;
        (
            DiscoveryRun {
                params,
                phi,
                posteriors,
                trace: vec![ll],
                converged: true,
            },
            0,
        )
    } else {
        let mut best: Option<(f64, DiscoveryRun)> = None;
        let mut failed = 0usize;
        for trial in 0..config.n_init_hidden {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(DISCOVERY_STREAM_BASE + trial as u64);
            let run = init_hidden(&learned.params_bar, y, h, discovery_model, c, &mut rng)
                .and_then(|start| {
                    discovery_em_once(learned, ystar, start, discovery_model, alpha_u, c, config)
                });
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
        (
            best.ok_or(RaeddaError::InitializationFailure(
                "all discovery restarts failed".into(),
            ))?
            .1,
            failed,
        )
    };

    let loglik = *run.trace.last().unwrap();
    let spec = PenaltySpec::new(
        discovery_model,
        e,
        g_obs,
        y.p(),
        c,
        kept,
        Approach::InductiveDiscovery,
    )?;
    let classification = (0..m_star)
        .map(|i| {
            let row = run.posteriors.row(i);
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect();
    Ok(FitResult {
        rbic: rbic(loglik, spec.v(), kept),
        classification,
        trimming: TrimmingIndicators {
            zeta: learned.zeta.clone(),
            phi: run.phi,
        },
        posteriors: run.posteriors,
        params: run.params,
        loglik_trace: run.trace,
        loglik,
        c,
        converged: run.converged,
        diagnostics: FitDiagnostics {
            inner_solvers_converged: true,
            failed_restarts: failed,
            notes: Vec::new(),
        },
    })
}

/// Full inductive result: the frozen learning phase, the augmented-set
/// discovery fit, and bookkeeping to map rows back to their origins.
#[derive(Debug, Clone)]
pub struct InductiveFit {
    pub learned: LearnedModel,
    pub augmented: AugmentedTestSet,
    pub fit: FitResult,
    /// MAP class per original test row
    pub test_classification: Vec<usize>,
    /// (training row index, discovery-phase class) for each recovered row
    pub recovered: Vec<(usize, usize)>,
}

/// Composes learning phase, augmented-set construction, and discovery.
pub fn fit_inductive(
    config: &FitConfig,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    e: usize,
    learning_model: ModelName,
    discovery_model: ModelName,
) -> Result<InductiveFit> {
    config.validate()?;
    crate::dataset::check_pair(labeled, unlabeled)?;
    if e < labeled.g {
        return Err(RaeddaError::ConfigError(format!(
            "requested {e} classes but {} are observed",
            labeled.g
        )));
    }
    let learned = fit_learning_phase(
        labeled,
        learning_model,
        config.alpha_l,
        config.n_init,
        config.seed,
    )?;
    let c = match config.c {
        ConstraintSpec::Fixed(v) => v,
        ConstraintSpec::Auto { multiplier } => (multiplier * learned.c_tilde).max(1.0),
    };
    let augmented = build_augmented_test(labeled, &learned.zeta, unlabeled)?;
    let fit = fit_discovery_phase(
        &learned,
        &augmented,
        e - labeled.g,
        discovery_model,
        config.alpha_u,
        c,
        config,
    )?;
    let mut test_classification = vec![0usize; unlabeled.m()];
    let mut recovered = Vec::new();
    for (row, prov) in augmented.provenance.iter().enumerate() {
        match *prov {
            RowProvenance::Test { index } => {
                test_classification[index] = fit.classification[row]
            }
            RowProvenance::Recovered { train_index, .. } => {
                recovered.push((train_index, fit.classification[row]))
            }
        }
    }
    Ok(InductiveFit {
        learned,
        augmented,
        fit,
        test_classification,
        recovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labeled_from_rows(rows: &[(Vec<f64>, usize)], g: usize) -> LabeledDataset {
        let p = rows[0].0.len();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i].0[j]);
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let names = (0..g).map(|i| format!("c{i}")).collect();
        LabeledDataset::new(x, labels, names).unwrap()
    }

    fn two_class_rows() -> Vec<(Vec<f64>, usize)> {
        let offsets = [
            (0.0, 0.0),
            (0.4, -0.3),
            (-0.5, 0.2),
            (0.1, 0.5),
            (-0.2, -0.4),
            (0.3, 0.1),
        ];
        let mut rows = Vec::new();
        for &(dx, dy) in &offsets {
            rows.push((vec![dx, dy], 0));
        }
        for &(dx, dy) in &offsets {
            rows.push((vec![10.0 + dx, 10.0 + dy], 1));
        }
        rows
    }

    fn cluster(cx: f64, cy: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for &(dx, dy) in &[
            (0.1, 0.2),
            (-0.3, 0.1),
            (0.2, -0.2),
            (-0.1, -0.3),
            (0.4, 0.0),
        ] {
            out.push(cx + dx);
            out.push(cy + dy);
        }
        out
    }

    #[test]
    fn learning_phase_matches_shared_initializer_bitwise() {
        let labeled = labeled_from_rows(&two_class_rows(), 2);
        let learned = fit_learning_phase(&labeled, ModelName::VVE, 0.0, 4, 5).unwrap();
        let (params, zeta, _) = robust_init_known(&labeled, ModelName::VVE, 0.0, 4, 5).unwrap();
        assert_eq!(learned.zeta, zeta);
        for (a, b) in learned.params_bar.tau.iter().zip(&params.tau) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in learned.params_bar.mu.iter().zip(&params.mu) {
            assert_eq!(a, b);
        }
        assert!(learned.c_tilde >= 1.0);
    }

    #[test]
    fn augmented_test_bookkeeping() {
        let labeled = labeled_from_rows(&two_class_rows(), 2);
        let y = UnlabeledDataset::new(DMatrix::from_row_slice(5, 2, &cluster(0.0, 0.0)))
            .unwrap();
        // no trimming: Y* = Y
        let zeta = vec![true; labeled.n()];
        let aug = build_augmented_test(&labeled, &zeta, &y).unwrap();
        assert_eq!(aug.m_star(), 5);
        assert_eq!(aug.data.y, y.y);

        // two trimmed rows recovered in ascending index order
        let mut zeta = vec![true; labeled.n()];
        zeta[7] = false;
        zeta[2] = false;
        let aug = build_augmented_test(&labeled, &zeta, &y).unwrap();
        assert_eq!(aug.m_star(), 7);
        assert_eq!(
            aug.provenance[5],
            RowProvenance::Recovered {
                train_index: 2,
                label: 0
            }
        );
        assert_eq!(
            aug.provenance[6],
            RowProvenance::Recovered {
                train_index: 7,
                label: 1
            }
        );
        assert_eq!(aug.data.row(6), labeled.row(7));
    }

    #[test]
    fn tau_update_hand_example() {
        let tau = discovery_tau_update(&[0.6, 0.4], &[0.4]);
        assert_relative_eq!(tau[0], 0.36, epsilon = 1e-12);
        assert_relative_eq!(tau[1], 0.24, epsilon = 1e-12);
        assert_relative_eq!(tau[2], 0.4, epsilon = 1e-12);
        assert_relative_eq!(tau.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lattice_violation_raised() {
        let labeled = labeled_from_rows(&two_class_rows(), 2);
        let y = UnlabeledDataset::new(DMatrix::from_row_slice(5, 2, &cluster(0.0, 0.0)))
            .unwrap();
        let config = FitConfig {
            n_init: 2,
            ..FitConfig::default()
        };
        let err = fit_inductive(&config, &labeled, &y, 3, ModelName::VVV, ModelName::EEE);
        assert!(matches!(
            err,
            Err(RaeddaError::ModelLatticeViolation { .. })
        ));
    }

    #[test]
    fn discovery_finds_hidden_class_with_frozen_known_params() {
        let labeled = labeled_from_rows(&two_class_rows(), 2);
        let mut y = cluster(0.0, 0.0);
        y.extend(cluster(10.0, 10.0));
        y.extend(cluster(-10.0, 10.0));
        let unlabeled = UnlabeledDataset::new(DMatrix::from_row_slice(15, 2, &y)).unwrap();
        let config = FitConfig {
            n_init: 4,
            n_init_hidden: 8,
            seed: 13,
            ..FitConfig::default()
        };
        let out = fit_inductive(
            &config,
            &labeled,
            &unlabeled,
            3,
            ModelName::VVV,
            ModelName::VVV,
        )
        .unwrap();
        for i in 10..15 {
            assert_eq!(out.test_classification[i], 2, "row {i}");
        }
        for i in 0..5 {
            assert_eq!(out.test_classification[i], 0);
            assert_eq!(out.test_classification[i + 5], 1);
        }
        // frozen-parameter invariant, bitwise
        for g in 0..2 {
            assert_eq!(out.fit.params.mu[g], out.learned.params_bar.mu[g]);
            assert_eq!(
                out.fit.params.sigma[g].lambda.to_bits(),
                out.learned.params_bar.sigma[g].lambda.to_bits()
            );
            assert_eq!(
                out.fit.params.sigma[g].orientation,
                out.learned.params_bar.sigma[g].orientation
            );
        }
        // known-group ratio preserved
        let r_learned = out.learned.params_bar.tau[0] / out.learned.params_bar.tau[1];
        let r_fit = out.fit.params.tau[0] / out.fit.params.tau[1];
        assert_relative_eq!(r_learned, r_fit, epsilon = 1e-10);
        assert_relative_eq!(out.fit.params.tau.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        // monotone discovery trace
        for w in out.fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace decreased: {:?}", w);
        }
        // determinism
        let again = fit_inductive(
            &config,
            &labeled,
            &unlabeled,
            3,
            ModelName::VVV,
            ModelName::VVV,
        )
        .unwrap();
        assert_eq!(again.test_classification, out.test_classification);
        assert_eq!(again.fit.loglik.to_bits(), out.fit.loglik.to_bits());
    }

    #[test]
    fn mislabeled_units_trimmed_then_recovered_into_hidden_class() {
        // two known regions plus a hidden one; two training units from the
        // hidden region carry wrong labels
        let mut rows = two_class_rows();
        rows.push((vec![-10.1, 10.2], 0));
        rows.push((vec![-9.8, 9.9], 1));
        let labeled = labeled_from_rows(&rows, 2);
        let mut y = cluster(0.0, 0.0);
        y.extend(cluster(10.0, 10.0));
        y.extend(cluster(-10.0, 10.0));
        let unlabeled = UnlabeledDataset::new(DMatrix::from_row_slice(15, 2, &y)).unwrap();
        let alpha_l = 2.0 / labeled.n() as f64;
        let config = FitConfig {
            alpha_l,
            n_init: 8,
            n_init_hidden: 8,
            seed: 21,
            ..FitConfig::default()
        };
        let out = fit_inductive(
            &config,
            &labeled,
            &unlabeled,
            3,
            ModelName::VVV,
            ModelName::VVV,
        )
        .unwrap();
        // both mislabeled units trimmed in learning...
        assert!(!out.learned.zeta[12]);
        assert!(!out.learned.zeta[13]);
        // ...and assigned to the hidden class in discovery
        assert_eq!(out.recovered.len(), 2);
        for &(idx, class) in &out.recovered {
            assert!(idx == 12 || idx == 13);
            assert_eq!(class, 2);
        }
    }

    #[test]
    fn h_zero_supervised_reduction() {
        let labeled = labeled_from_rows(&two_class_rows(), 2);
        let mut y = cluster(0.0, 0.0);
        y.extend(cluster(10.0, 10.0));
        let unlabeled = UnlabeledDataset::new(DMatrix::from_row_slice(10, 2, &y)).unwrap();
        let config = FitConfig {
            n_init: 3,
            seed: 1,
            ..FitConfig::default()
        };
        let out = fit_inductive(
            &config,
            &labeled,
            &unlabeled,
            2,
            ModelName::EEE,
            ModelName::EEE,
        )
        .unwrap();
        assert!(out.fit.converged);
        assert_eq!(out.fit.params.tau, out.learned.params_bar.tau);
        for i in 0..5 {
            assert_eq!(out.test_classification[i], 0);
            assert_eq!(out.test_classification[i + 5], 1);
        }
    }
}
