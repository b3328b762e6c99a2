//! Synthetic-scenario generation with label and attribute contamination,
//! the four evaluation metrics, and Monte-Carlo / sensitivity drivers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{RaeddaError, Result};
use crate::selection::{search, FitApproach, SearchFit, SearchGrid};
use crate::transductive::FitConfig;

const P: usize = 6;
const REJECTION_CAP: usize = 1_000_000;

/// Covariance layout of the three generating groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceScenario {
    /// spherical groups with equal volumes
    Eii,
    /// diagonal groups with a common covariance
    Eei,
    /// equal volumes, varying shapes and orientations
    Evv,
    /// fully varying groups
    Vvv,
    /// fully varying groups with severe overlap
    VvvOverlap,
}

impl CovarianceScenario {
    /// `(a, b, c, d, e, f)` entries of the generating covariances.
    pub fn tuple(self) -> (f64, f64, f64, f64, f64, f64) {
        match self {
            CovarianceScenario::Eii => (1.0, 1.0, 1.0, 1.0, 0.0, 1.0),
            CovarianceScenario::Eei => (5.0, 1.0, 5.0, 1.0, 0.0, 5.0),
            CovarianceScenario::Evv => (5.0, 5.0, 1.0, 3.0, -2.0, 3.0),
            CovarianceScenario::Vvv => (1.0, 20.0, 5.0, 15.0, -10.0, 15.0),
            CovarianceScenario::VvvOverlap => (1.0, 45.0, 30.0, 15.0, -10.0, 15.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proportions {
    Equal,
    Unequal,
}

impl Proportions {
    /// Training sizes (groups 1–2) and test sizes (groups 1–3).
    pub fn sizes(self) -> ([usize; 2], [usize; 3]) {
        match self {
            Proportions::Equal => ([285, 285], [360, 360, 360]),
            Proportions::Unequal => ([190, 380], [210, 430, 60]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contamination {
    None,
    Low,
    Medium,
    High,
}

impl Contamination {
    /// `(Q_l, Q_u)` contaminated counts.
    pub fn counts(self) -> (usize, usize) {
        match self {
            Contamination::None => (0, 0),
            Contamination::Low => (10, 40),
            Contamination::Medium => (20, 80),
            Contamination::High => (30, 120),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub covariance_scenario: CovarianceScenario,
    pub proportions: Proportions,
    pub contamination: Contamination,
    pub seed: u64,
}

/// True origin of a test row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestLabel {
    /// zero-based generating group (2 = the class hidden from training)
    Group(usize),
    Outlier,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub test_labels: Vec<TestLabel>,
    pub mislabeled_train: Vec<usize>,
    pub train_outliers: Vec<usize>,
    pub test_outliers: Vec<usize>,
}

/// Generating means and covariances of the three groups.
pub fn scenario_parameters(
    cov: CovarianceScenario,
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let (a, b, c, d, e, f) = cov.tuple();
    let mu = vec![
        DVector::from_vec(vec![0.0, 8.0, 0.0, 0.0, 0.0, 0.0]),
        DVector::from_vec(vec![8.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DVector::from_vec(vec![-8.0, -8.0, 0.0, 0.0, 0.0, 0.0]),
    ];
    let mut s1 = DMatrix::identity(P, P);
    s1[(1, 1)] = a;
    let mut s2 = DMatrix::identity(P, P);
    s2[(0, 0)] = b;
    s2[(1, 1)] = c;
    let mut s3 = DMatrix::identity(P, P);
    s3[(0, 0)] = d;
    s3[(0, 1)] = e;
    s3[(1, 0)] = e;
    s3[(1, 1)] = f;
    (mu, vec![s1, s2, s3])
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller on the half-open unit interval
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub(crate) fn sample_gaussian(
    rng: &mut ChaCha8Rng,
    mu: &DVector<f64>,
    chol: &DMatrix<f64>,
) -> DVector<f64> {
    let z = DVector::from_fn(mu.len(), |_, _| standard_normal(rng));
    mu + chol * z
}

/// Draws the complete scenario: genuine groups, planted outliers with the
/// Mahalanobis acceptance rule, and flipped training labels.
pub fn generate_scenario(
    spec: &ScenarioSpec,
) -> Result<(LabeledDataset, UnlabeledDataset, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mu, sigma) = scenario_parameters(spec.covariance_scenario);
    let chol: Vec<DMatrix<f64>> = sigma
        .iter()
        .map(|s| {
            s.clone()
                .cholesky()
                .ok_or_else(|| {
                    RaeddaError::DegenerateCovariance("scenario covariance not SPD".into())
                })
                .map(|c| c.l())
        })
        .collect::<Result<_>>()?;
    let inv: Vec<DMatrix<f64>> = sigma
        .iter()
        .map(|s| s.clone().try_inverse().unwrap())
        .collect();
    let ([n1, n2], [m1, m2, m3]) = spec.proportions.sizes();
    let (q_l, q_u) = spec.contamination.counts();

    // genuine rows, fixed draw order: train group 1, train group 2, then
    // test groups 1..3
    let mut train_rows: Vec<DVector<f64>> = Vec::with_capacity(n1 + n2 + q_l);
    let mut train_labels: Vec<usize> = Vec::with_capacity(n1 + n2 + q_l);
    for (g, &n) in [n1, n2].iter().enumerate() {
        for _ in 0..n {
            train_rows.push(sample_gaussian(&mut rng, &mu[g], &chol[g]));
            train_labels.push(g);
        }
    }
    let mut test_rows: Vec<DVector<f64>> = Vec::with_capacity(m1 + m2 + m3 + q_u);
    let mut test_labels: Vec<TestLabel> = Vec::with_capacity(m1 + m2 + m3 + q_u);
    for (g, &m) in [m1, m2, m3].iter().enumerate() {
        for _ in 0..m {
            test_rows.push(sample_gaussian(&mut rng, &mu[g], &chol[g]));
            test_labels.push(TestLabel::Group(g));
        }
    }

    // outlier support: per-coordinate data range widened by six times the
    // largest group standard deviation
    let mut lo = vec![f64::INFINITY; P];
    let mut hi = vec![f64::NEG_INFINITY; P];
    for row in train_rows.iter().chain(test_rows.iter()) {
        for j in 0..P {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let max_std = sigma
        .iter()
        .map(|s| {
            s.clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(0.0_f64, |a, &b| a.max(b))
        })
        .fold(0.0_f64, f64::max)
        .sqrt();
    let pad = 6.0 * max_std;
    let threshold = ChiSquared::new(P as f64).unwrap().inverse_cdf(0.975);

    let draw_outlier = |rng: &mut ChaCha8Rng| -> Result<DVector<f64>> {
        for _ in 0..REJECTION_CAP {
            let x = DVector::from_fn(P, |j, _| rng.gen_range(lo[j] - pad..hi[j] + pad));
            let far = (0..3).all(|g| {
                let d = &x - &mu[g];
                (d.transpose() * &inv[g] * &d)[(0, 0)] > threshold
            });
            if far {
                return Ok(x);
            }
        }
        Err(RaeddaError::GenerationFailure(
            "outlier rejection sampling exhausted its attempt budget".into(),
        ))
    };

    let genuine_train = n1 + n2;
    let mut train_outliers = Vec::with_capacity(q_l);
    for k in 0..q_l {
        let x = draw_outlier(&mut rng)?;
        train_rows.push(x);
        train_labels.push(rng.gen_range(0..2usize));
        train_outliers.push(genuine_train + k);
    }
    let genuine_test = m1 + m2 + m3;
    let mut test_outliers = Vec::with_capacity(q_u);
    for k in 0..q_u {
        let x = draw_outlier(&mut rng)?;
        test_rows.push(x);
        test_labels.push(TestLabel::Outlier);
        test_outliers.push(genuine_test + k);
    }

    // label noise: flip genuine training units to a wrong observed class
    let flips = rand::seq::index::sample(&mut rng, genuine_train, q_l);
    let mut mislabeled_train: Vec<usize> = flips.iter().collect();
    mislabeled_train.sort_unstable();
    for &i in &mislabeled_train {
        let wrong: Vec<usize> = (0..2).filter(|&g| g != train_labels[i]).collect();
        train_labels[i] = wrong[rng.gen_range(0..wrong.len())];
    }

    let x = DMatrix::from_fn(train_rows.len(), P, |i, j| train_rows[i][j]);
    let y = DMatrix::from_fn(test_rows.len(), P, |i, j| test_rows[i][j]);
    let labeled = LabeledDataset::new(x, train_labels, vec!["g1".into(), "g2".into()])?;
    let unlabeled = UnlabeledDataset::new(y)?;
    Ok((
        labeled,
        unlabeled,
        GroundTruth {
            test_labels,
            mislabeled_train,
            train_outliers,
            test_outliers,
        },
    ))
}

/// Adjusted Rand index between two labelings of the same rows.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RaeddaError::ShapeError(format!(
            "partition lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Err(RaeddaError::EmptyInput("empty partitions".into()));
    }
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&ai, &bi) in a.iter().zip(b) {
        *table.entry((ai, bi)).or_default() += 1.0;
        *rows.entry(ai).or_default() += 1.0;
        *cols.entry(bi).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_cells: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as f64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        // both partitions trivial (e.g. all singletons vs all singletons)
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub pct_label_noise: f64,
    pub pct_hidden_group: f64,
    pub ari: f64,
    pub pct_novelty: f64,
}

/// Scores one fitted replicate against the generating truth.
///
/// `classification` and `test_trimmed` cover the original test rows; `zeta`
/// covers the training rows; `g` is the observed class count. A trimmed
/// test row is treated as an extra "outlier" label for the ARI partition.
pub fn score_fit(
    classification: &[usize],
    test_trimmed: &[bool],
    zeta: &[bool],
    g: usize,
    truth: &GroundTruth,
) -> MetricsReport {
    let frac = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };

    let noise_hits = truth
        .mislabeled_train
        .iter()
        .filter(|&&i| !zeta[i])
        .count();
    let pct_label_noise = frac(noise_hits, truth.mislabeled_train.len());

    let hidden_rows: Vec<usize> = truth
        .test_labels
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, TestLabel::Group(2)))
        .map(|(i, _)| i)
        .collect();
    let hidden_hits = hidden_rows
        .iter()
        .filter(|&&i| classification[i] >= g)
        .count();
    let pct_hidden_group = frac(hidden_hits, hidden_rows.len());

    // outlier/trimmed rows get a dedicated label past every class index
    let sentinel = classification.iter().copied().max().unwrap_or(0) + truth.test_labels.len()
        + 1;
    let fitted: Vec<usize> = classification
        .iter()
        .zip(test_trimmed)
        .map(|(&c, &t)| if t { sentinel } else { c })
        .collect();
    let true_part: Vec<usize> = truth
        .test_labels
        .iter()
        .map(|l| match l {
            TestLabel::Group(gi) => *gi,
            TestLabel::Outlier => sentinel,
        })
        .collect();
    let ari = adjusted_rand_index(&fitted, &true_part).unwrap_or(0.0);

    let novelty_rows: Vec<usize> = (0..truth.test_labels.len())
        .filter(|&i| {
            matches!(truth.test_labels[i], TestLabel::Group(2) | TestLabel::Outlier)
        })
        .collect();
    let novelty_hits = novelty_rows
        .iter()
        .filter(|&&i| classification[i] >= g || test_trimmed[i])
        .count();
    let pct_novelty = frac(novelty_hits, novelty_rows.len());

    MetricsReport {
        pct_label_noise,
        pct_hidden_group,
        ari,
        pct_novelty,
    }
}

/// Trimming levels matching a known contamination design, optionally
/// scaled: `α_l = mult·2Q_l/N`, `α_u = mult·Q_u/M`.
pub fn trimming_levels(
    q_l: usize,
    q_u: usize,
    n: usize,
    m: usize,
    multiplier: f64,
) -> (f64, f64) {
    (
        (multiplier * 2.0 * q_l as f64 / n as f64).min(0.49),
        (multiplier * q_u as f64 / m as f64).min(0.49),
    )
}

/// Lower/median/upper quartiles (linear interpolation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quartiles(values: &[f64]) -> Quartiles {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Quartiles {
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
    }
}

#[derive(Debug, Clone)]
pub struct MetricsSummary {
    pub pct_label_noise: Quartiles,
    pub pct_hidden_group: Quartiles,
    pub ari: Quartiles,
    pub pct_novelty: Quartiles,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    /// per-replicate metrics, index-aligned with the replicate seeds;
    /// failed replicates are None
    pub replicates: Vec<Option<MetricsReport>>,
    pub failures: Vec<(usize, String)>,
    pub summary: MetricsSummary,
    /// detected hidden-class counts (selected E minus G) across replicates
    pub hidden_count_histogram: BTreeMap<usize, usize>,
}

/// How each Monte-Carlo replicate is fitted.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub grid: SearchGrid,
    pub config: FitConfig,
    pub approach: FitApproach,
}

fn derive_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 step keeps per-replicate streams decorrelated
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `b` independent seeded replicates of one scenario/method cell.
pub fn run_monte_carlo(
    scenario: &ScenarioSpec,
    method: &MethodConfig,
    b: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if b == 0 {
        return Err(RaeddaError::ConfigError("B must be at least 1".into()));
    }
    let outcomes: Vec<std::result::Result<(MetricsReport, usize), String>> = (0..b)
        .into_par_iter()
        .map(|rep| run_replicate(scenario, method, derive_seed(seed, rep)))
        .collect();

    let mut replicates = Vec::with_capacity(b);
    let mut failures = Vec::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((metrics, hidden)) => {
                replicates.push(Some(metrics));
                *histogram.entry(hidden).or_default() += 1;
            }
            Err(msg) => {
                replicates.push(None);
                failures.push((i, msg));
            }
        }
    }
    let ok: Vec<MetricsReport> = replicates.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(RaeddaError::SearchFailure(
            failures.iter().map(|(i, m)| format!("replicate {i}: {m}")).collect(),
        ));
    }
    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { ok.iter().map(f).collect() };
    let summary = MetricsSummary {
        pct_label_noise: quartiles(&collect(|m| m.pct_label_noise)),
        pct_hidden_group: quartiles(&collect(|m| m.pct_hidden_group)),
        ari: quartiles(&collect(|m| m.ari)),
        pct_novelty: quartiles(&collect(|m| m.pct_novelty)),
    };
    Ok(MonteCarloReport {
        replicates,
        failures,
        summary,
        hidden_count_histogram: histogram,
    })
}

fn run_replicate(
    scenario: &ScenarioSpec,
    method: &MethodConfig,
    rep_seed: u64,
) -> std::result::Result<(MetricsReport, usize), String> {
    let spec = ScenarioSpec {
        seed: rep_seed,
        ..*scenario
    };
    let (labeled, unlabeled, truth) = generate_scenario(&spec).map_err(|e| e.to_string())?;
    let config = FitConfig {
        seed: rep_seed,
        ..method.config.clone()
    };
    let outcome = search(&method.grid, &labeled, &unlabeled, &config, method.approach)
        .map_err(|e| e.to_string())?;
    let g = labeled.g;
    let detected_hidden = outcome.table[0].e - g;
    let m = unlabeled.m();
    let (classification, test_trimmed, zeta): (Vec<usize>, Vec<bool>, Vec<bool>) =
        match &outcome.best {
            SearchFit::Transductive(fit) => (
                fit.classification.clone(),
                fit.trimming.phi.iter().map(|&k| !k).collect(),
                fit.trimming.zeta.clone(),
            ),
            SearchFit::Inductive(ind) => (
                ind.test_classification.clone(),
                ind.fit.trimming.phi[..m].iter().map(|&k| !k).collect(),
                ind.learned.zeta.clone(),
            ),
        };
    Ok((
        score_fit(&classification, &test_trimmed, &zeta, g, &truth),
        detected_hidden,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelName;
    use crate::transductive::ConstraintSpec;
    use approx::assert_relative_eq;

    fn base_spec(contamination: Contamination, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            covariance_scenario: CovarianceScenario::Eii,
            proportions: Proportions::Equal,
            contamination,
            seed,
        }
    }

    #[test]
    fn clean_scenario_counts() {
        let (labeled, unlabeled, truth) =
            generate_scenario(&base_spec(Contamination::None, 1)).unwrap();
        assert_eq!(labeled.n(), 570);
        assert_eq!(labeled.p(), 6);
        assert_eq!(unlabeled.m(), 1080);
        assert!(truth.mislabeled_train.is_empty());
        assert!(truth.train_outliers.is_empty());
        assert!(truth.test_outliers.is_empty());
    }

    #[test]
    fn medium_contamination_counts() {
        let spec = ScenarioSpec {
            proportions: Proportions::Unequal,
            ..base_spec(Contamination::Medium, 2)
        };
        let (labeled, unlabeled, truth) = generate_scenario(&spec).unwrap();
        assert_eq!(labeled.n(), 190 + 380 + 20);
        assert_eq!(unlabeled.m(), 210 + 430 + 60 + 80);
        assert_eq!(truth.mislabeled_train.len(), 20);
        assert_eq!(truth.train_outliers.len(), 20);
        assert_eq!(truth.test_outliers.len(), 80);
        // flips chosen among genuine rows only
        assert!(truth.mislabeled_train.iter().all(|&i| i < 570));
    }

    #[test]
    fn planted_outliers_beyond_chi_square_quantile() {
        let threshold = ChiSquared::new(6.0).unwrap().inverse_cdf(0.975);
        assert!((threshold - 14.449).abs() < 0.01);
        let spec = ScenarioSpec {
            covariance_scenario: CovarianceScenario::Vvv,
            ..base_spec(Contamination::Medium, 3)
        };
        let (labeled, unlabeled, truth) = generate_scenario(&spec).unwrap();
        let (mu, sigma) = scenario_parameters(CovarianceScenario::Vvv);
        let inv: Vec<DMatrix<f64>> = sigma
            .iter()
            .map(|s| s.clone().try_inverse().unwrap())
            .collect();
        let check = |x: DVector<f64>| {
            for g in 0..3 {
                let d = &x - &mu[g];
                let m2 = (d.transpose() * &inv[g] * &d)[(0, 0)];
                assert!(m2 > threshold, "distance {m2} not beyond {threshold}");
            }
        };
        for &i in &truth.train_outliers {
            check(labeled.row(i));
        }
        for &i in &truth.test_outliers {
            check(unlabeled.row(i));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = base_spec(Contamination::Low, 77);
        let (l1, u1, t1) = generate_scenario(&spec).unwrap();
        let (l2, u2, t2) = generate_scenario(&spec).unwrap();
        assert_eq!(l1.x, l2.x);
        assert_eq!(l1.labels, l2.labels);
        assert_eq!(u1.y, u2.y);
        assert_eq!(t1.mislabeled_train, t2.mislabeled_train);
    }

    #[test]
    fn sampler_mean_matches_target() {
        let (mu, sigma) = scenario_parameters(CovarianceScenario::Vvv);
        let chol = sigma[2].clone().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut sum = DVector::zeros(6);
        for _ in 0..n {
            sum += sample_gaussian(&mut rng, &mu[2], &chol);
        }
        let mean = sum / n as f64;
        let max_sd = 15.0_f64.sqrt();
        for j in 0..6 {
            let band = 3.0 * max_sd / (n as f64).sqrt();
            assert!(
                (mean[j] - mu[2][j]).abs() < band,
                "coordinate {j}: {} vs {}",
                mean[j],
                mu[2][j]
            );
        }
    }

    #[test]
    fn ari_known_values() {
        assert_relative_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        assert_relative_eq!(
            adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(),
            1.0
        );
        // brute-force pair-counting oracle over all 6 pairs
        let a = [1usize, 1, 2, 2];
        let b = [1usize, 2, 1, 2];
        let pairs = |l: &[usize]| -> Vec<bool> {
            let mut out = Vec::new();
            for i in 0..l.len() {
                for j in (i + 1)..l.len() {
                    out.push(l[i] == l[j]);
                }
            }
            out
        };
        let pa = pairs(&a);
        let pb = pairs(&b);
        let n = pa.len() as f64;
        let n11 = pa.iter().zip(&pb).filter(|(&x, &y)| x && y).count() as f64;
        let na = pa.iter().filter(|&&x| x).count() as f64;
        let nb = pb.iter().filter(|&&x| x).count() as f64;
        let expected = (n11 - na * nb / n) / (0.5 * (na + nb) - na * nb / n);
        assert_relative_eq!(
            adjusted_rand_index(&a, &b).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert!(adjusted_rand_index(&[0, 1], &[0, 1, 2]).is_err());
        // symmetry
        let x = [0usize, 1, 1, 2, 0, 2];
        let y = [1usize, 1, 0, 2, 2, 2];
        assert_relative_eq!(
            adjusted_rand_index(&x, &y).unwrap(),
            adjusted_rand_index(&y, &x).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn score_fit_hand_toy() {
        // six test rows: groups 1,1,2,2,3,outlier (zero-based 0,0,1,1,2)
        let truth = GroundTruth {
            test_labels: vec![
                TestLabel::Group(0),
                TestLabel::Group(0),
                TestLabel::Group(1),
                TestLabel::Group(1),
                TestLabel::Group(2),
                TestLabel::Outlier,
            ],
            mislabeled_train: vec![0, 3],
            train_outliers: vec![],
            test_outliers: vec![5],
        };
        // fit with G=2: hidden class found for row 4, outlier trimmed,
        // one mislabeled unit caught
        let classification = vec![0, 0, 1, 1, 2, 1];
        let test_trimmed = vec![false, false, false, false, false, true];
        let zeta = vec![false, true, true, true];
        let m = score_fit(&classification, &test_trimmed, &zeta, 2, &truth);
        assert_relative_eq!(m.pct_label_noise, 0.5);
        assert_relative_eq!(m.pct_hidden_group, 1.0);
        assert_relative_eq!(m.pct_novelty, 1.0);
        assert_relative_eq!(m.ari, 1.0);

        // trims nothing: no label noise caught
        let zeta_all = vec![true; 4];
        let lazy = score_fit(
            &classification,
            &vec![false; 6],
            &zeta_all,
            2,
            &truth,
        );
        assert_relative_eq!(lazy.pct_label_noise, 0.0);
    }

    #[test]
    fn trimming_level_helper() {
        let (al, au) = trimming_levels(20, 80, 590, 1160, 1.0);
        assert_relative_eq!(al, 40.0 / 590.0, epsilon = 1e-12);
        assert_relative_eq!(au, 80.0 / 1160.0, epsilon = 1e-12);
        let (al_lo, _) = trimming_levels(20, 80, 590, 1160, 0.5);
        assert_relative_eq!(al_lo, 20.0 / 590.0, epsilon = 1e-12);
    }

    #[test]
    fn monte_carlo_single_replicate() {
        let scenario = base_spec(Contamination::None, 0);
        let method = MethodConfig {
            grid: SearchGrid {
                e_range: vec![3],
                models: vec![ModelName::EII],
                c_values: vec![ConstraintSpec::Fixed(100.0)],
            },
            config: FitConfig {
                n_init: 2,
                n_init_hidden: 4,
                max_iter: 100,
                ..FitConfig::default()
            },
            approach: FitApproach::Transductive,
        };
        let report = run_monte_carlo(&scenario, &method, 1, 42).unwrap();
        assert_eq!(report.replicates.len(), 1);
        assert!(report.failures.is_empty());
        let m = report.replicates[0].unwrap();
        // clean, well-separated spherical scenario: hidden group found
        assert!(m.pct_hidden_group > 0.9, "{m:?}");
        assert!(m.ari > 0.9, "{m:?}");
        assert_eq!(report.hidden_count_histogram[&1], 1);
    }
}
