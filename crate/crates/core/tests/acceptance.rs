//! End-to-end acceptance checks of the estimation, selection, simulation
//! and persistence layers. Each test prints a single PASS/FAIL line.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raedda_core::covariance::{
    mstep_covariances, mstep_discovery, scatter_deviance, FixedComponents,
    ScatterAccumulator,
};
use raedda_core::dataset::{LabeledDataset, UnlabeledDataset};
use raedda_core::eigen::EigenDecomposition;
use raedda_core::inductive::fit_learning_phase;
use raedda_core::model::{ModelName, ALL_MODELS};
use raedda_core::selection::{
    search, Approach, FitApproach, PenaltySpec, SearchFit, SearchGrid,
};
use raedda_core::simulation::{
    run_monte_carlo, trimming_levels, Contamination, CovarianceScenario, MethodConfig,
    Proportions, ScenarioSpec,
};
use raedda_core::transductive::{
    e_step, fit_transductive, m_step, ConstraintSpec, FitConfig,
};
use raedda_core::ModelArtifact;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn sigma2(lambda: f64, s: f64, theta: f64) -> DMatrix<f64> {
    let r = DMatrix::from_row_slice(
        2,
        2,
        &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
    );
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![s, 1.0 / s]));
    &r * a * r.transpose() * lambda
}

fn random_scatter(rng: &mut ChaCha8Rng, groups: usize) -> ScatterAccumulator {
    let w = (0..groups)
        .map(|_| {
            let lambda = rng.gen_range(0.5..3.0);
            let s = rng.gen_range(1.0..4.0);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let base = sigma2(lambda, s, theta);
            let jitter = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
            let n: f64 = rng.gen_range(8.0..40.0);
            (base + &jitter * jitter.transpose() * 0.2) * n
        })
        .collect();
    let n = (0..groups).map(|_| rng.gen_range(8.0..40.0)).collect();
    ScatterAccumulator { w, n }
}

/// Two labelled Gaussian blobs plus a test set holding both of them and a
/// shifted third cluster.
fn blob_pair(
    rng: &mut ChaCha8Rng,
    p: usize,
    n_per: usize,
    m_per: usize,
) -> (LabeledDataset, UnlabeledDataset) {
    let mut centers = vec![DVector::zeros(p); 3];
    centers[1][0] = 9.0;
    centers[2][0] = 4.5;
    if p > 1 {
        centers[2][1] = 9.0;
    }
    let draw = |rng: &mut ChaCha8Rng, c: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(p, |j, _| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            c[j] + (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
    };
    let mut train = Vec::new();
    let mut labels = Vec::new();
    for g in 0..2 {
        for _ in 0..n_per {
            train.push(draw(rng, &centers[g]));
            labels.push(g);
        }
    }
    let mut test = Vec::new();
    for c in &centers {
        for _ in 0..m_per {
            test.push(draw(rng, c));
        }
    }
    let x = DMatrix::from_fn(train.len(), p, |i, j| train[i][j]);
    let y = DMatrix::from_fn(test.len(), p, |i, j| test[i][j]);
    (
        LabeledDataset::new(x, labels, vec!["a".into(), "b".into()]).unwrap(),
        UnlabeledDataset::new(y).unwrap(),
    )
}

// ---------------------------------------------------------------------
// criterion 1: every trimmed log-likelihood trace is non-decreasing
// ---------------------------------------------------------------------
#[test]
fn criterion_1_monotone_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut fits = 0usize;
    let mut worst: f64 = 0.0;
    for model in ALL_MODELS {
        for rep in 0..8 {
            let p = 2 + rep % 2;
            let e = 2 + rep % 2;
            let (labeled, unlabeled) = blob_pair(&mut rng, p, 18, 14);
            let config = FitConfig {
                alpha_l: 0.05,
                alpha_u: 0.1,
                c: ConstraintSpec::Fixed(8.0),
                n_init: 2,
                n_init_hidden: 2,
                max_iter: 25,
                seed: rep as u64,
                ..FitConfig::default()
            };
            let traces: Vec<Vec<f64>> = vec![
                fit_transductive(&config, &labeled, &unlabeled, e, model)
                    .unwrap()
                    .loglik_trace,
                raedda_core::fit_inductive(&config, &labeled, &unlabeled, e, model, model)
                    .unwrap()
                    .fit
                    .loglik_trace,
            ];
            for trace in traces {
                fits += 1;
                for w in trace.windows(2) {
                    worst = worst.min(w[1] - w[0]);
                }
            }
        }
    }
    report(
        "1 monotone-traces",
        fits >= 200 && worst >= -1e-8,
        &format!("{fits} fits, smallest loglik increment {worst:.3e}"),
    );
}

// ---------------------------------------------------------------------
// criterion 2: M-step beats/matches a generic constrained optimizer
// ---------------------------------------------------------------------

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], scale: f64, iters: usize) -> f64 {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += scale;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].0.clone();
        let refl: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - worst[j]))
            .collect();
        let fr = f(&refl);
        if fr < simplex[0].1 {
            let exp: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - worst[j]))
                .collect();
            let fe = f(&exp);
            simplex[n] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (refl, fr);
        } else {
            let con: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (worst[j] - centroid[j]))
                .collect();
            let fc = f(&con);
            if fc < simplex[n].1 {
                simplex[n] = (con, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = (0..n)
                        .map(|j| best[j] + 0.5 * (item.0[j] - best[j]))
                        .collect();
                    let fv = f(&v);
                    *item = (v, fv);
                }
            }
        }
    }
    simplex
        .iter()
        .map(|(_, fv)| *fv)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy)]
enum Slot {
    /// one free parameter per group
    PerGroup,
    /// one shared free parameter
    Shared,
    /// fixed to the given value
    Fixed(f64),
}

/// Maps a free-parameter vector to per-group (λ, s, θ) triples.
struct Layout {
    volume: Slot,
    shape: Slot,
    orient: Slot,
    groups: usize,
}

impl Layout {
    fn dims(&self) -> usize {
        let per = |s: &Slot| match s {
            Slot::PerGroup => self.groups,
            Slot::Shared => 1,
            Slot::Fixed(_) => 0,
        };
        per(&self.volume) + per(&self.shape) + per(&self.orient)
    }

    fn unpack(&self, x: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut idx = 0;
        let mut take = |s: &Slot, g: usize| -> f64 {
            match s {
                Slot::PerGroup => {
                    let v = x[idx + g];
                    if g + 1 == self.groups {
                        idx += self.groups;
                    }
                    v
                }
                Slot::Shared => {
                    let v = x[idx];
                    if g + 1 == self.groups {
                        idx += 1;
                    }
                    v
                }
                Slot::Fixed(v) => *v,
            }
        };
        let mut out = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            out.push((take(&self.volume, g), 0.0, 0.0));
        }
        for g in 0..self.groups {
            out[g].1 = take(&self.shape, g);
        }
        for g in 0..self.groups {
            out[g].2 = take(&self.orient, g);
        }
        out
    }
}

fn letter_slot(letter: raedda_core::Letter, fixed_value: f64) -> Slot {
    match letter {
        raedda_core::Letter::Variable => Slot::PerGroup,
        raedda_core::Letter::Equal => Slot::Shared,
        raedda_core::Letter::Identity => Slot::Fixed(fixed_value),
    }
}

/// Deviance of per-group (log λ, log s, θ) triples against a scatter, with
/// a smooth penalty once the joint eigenvalue ratio exceeds `c`.
fn penalized_deviance(
    triples: &[(f64, f64, f64)],
    scatter: &ScatterAccumulator,
    c: Option<f64>,
) -> f64 {
    let mut dev = 0.0;
    let mut eigs: Vec<f64> = Vec::new();
    for (g, &(lv, ls, theta)) in triples.iter().enumerate() {
        let lambda = lv.exp();
        let s = ls.exp();
        let sigma = sigma2(lambda, s, theta);
        let det = lambda * lambda;
        let inv = sigma.try_inverse().unwrap();
        dev += scatter.n[g] * (det.ln() + (&inv * &scatter.w[g]).trace() / scatter.n[g]);
        eigs.push(lambda * s);
        eigs.push(lambda / s);
    }
    if let Some(cap) = c {
        let hi = eigs.iter().cloned().fold(f64::MIN, f64::max);
        let lo = eigs.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = hi / lo;
        if ratio > cap {
            dev += 1e8 * (ratio.ln() - cap.ln()).powi(2);
        }
    }
    dev
}

fn triple_of(d: &EigenDecomposition) -> (f64, f64, f64) {
    (
        d.lambda.ln(),
        d.shape[0].ln(),
        d.orientation[(1, 0)].atan2(d.orientation[(0, 0)]),
    )
}

fn pack(layout: &Layout, triples: &[(f64, f64, f64)]) -> Vec<f64> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<f64>, s: &Slot, pick: &dyn Fn(usize) -> f64, g: usize| match s {
        Slot::PerGroup => {
            for i in 0..g {
                out.push(pick(i));
            }
        }
        Slot::Shared => out.push(pick(0)),
        Slot::Fixed(_) => {}
    };
    let g = triples.len();
    push(&mut out, &layout.volume, &|i| triples[i].0, g);
    push(&mut out, &layout.shape, &|i| triples[i].1, g);
    push(&mut out, &layout.orient, &|i| triples[i].2, g);
    out
}

fn optimizer_floor(
    layout: &Layout,
    start: &[f64],
    scatter: &ScatterAccumulator,
    c: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let objective = |x: &[f64]| penalized_deviance(&layout.unpack(x), scatter, c);
    let mut best = objective(start);
    for restart in 0..6 {
        let jitter: Vec<f64> = start
            .iter()
            .map(|&v| {
                if restart == 0 {
                    v
                } else {
                    v + (rng.gen::<f64>() - 0.5) * 0.6
                }
            })
            .collect();
        best = best.min(nelder_mead(&objective, &jitter, 0.2, 1200));
    }
    best
}

#[test]
fn criterion_2_mstep_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = 6.0;
    let mut worst_gap: f64 = 0.0;
    // learned M-step for all fourteen models
    for model in ALL_MODELS {
        for _ in 0..20 {
            let scatter = random_scatter(&mut rng, 2);
            let decomps = mstep_covariances(model, &scatter, c, None).unwrap();
            let ours = scatter_deviance(&decomps, &scatter);
            let layout = Layout {
                volume: letter_slot(model.volume(), 0.0),
                shape: letter_slot(model.shape(), 0.0),
                orient: letter_slot(model.orientation(), 0.0),
                groups: 2,
            };
            let start = pack(
                &layout,
                &decomps.iter().map(triple_of).collect::<Vec<_>>(),
            );
            let cap = model.er_required().then_some(c);
            let floor = optimizer_floor(&layout, &start, &scatter, cap, &mut rng);
            worst_gap = worst_gap.max(ours - floor);
        }
    }
    // discovery M-step for every reachable pair
    let mut pairs = 0usize;
    for learning in ALL_MODELS {
        for discovery in learning.allowed_discovery_models() {
            pairs += 1;
            for _ in 0..20 {
                let learned_scatter = random_scatter(&mut rng, 2);
                let learned =
                    mstep_covariances(learning, &learned_scatter, c, None).unwrap();
                let fixed = FixedComponents::from_learned(learning, &learned);
                let hidden = random_scatter(&mut rng, 1);
                let decomps =
                    mstep_discovery(learning, discovery, &hidden, &fixed, c).unwrap();
                let ours = scatter_deviance(&decomps, &hidden);
                let fixed_triple = triple_of(&decomps[0]);
                let layout = Layout {
                    volume: match discovery.volume() {
                        raedda_core::Letter::Variable => Slot::PerGroup,
                        _ => Slot::Fixed(fixed_triple.0),
                    },
                    shape: match discovery.shape() {
                        raedda_core::Letter::Variable => Slot::PerGroup,
                        _ => Slot::Fixed(fixed_triple.1),
                    },
                    orient: match discovery.orientation() {
                        raedda_core::Letter::Variable => Slot::PerGroup,
                        _ => Slot::Fixed(fixed_triple.2),
                    },
                    groups: 1,
                };
                if layout.dims() == 0 {
                    continue;
                }
                let start = pack(&layout, &[fixed_triple]);
                let cap = discovery.er_required().then_some(c);
                let floor = optimizer_floor(&layout, &start, &hidden, cap, &mut rng);
                worst_gap = worst_gap.max(ours - floor);
            }
        }
    }
    report(
        "2 mstep-oracle",
        worst_gap <= 2e-5,
        &format!("{pairs} discovery pairs, worst deviance excess {worst_gap:.3e}"),
    );
}

// ---------------------------------------------------------------------
// criterion 3: penalty lookup table and the classical-BIC limit
// ---------------------------------------------------------------------
#[test]
fn criterion_3_penalty_table_and_bic_limit() {
    use ModelName::*;
    type F = fn(usize, usize, usize) -> usize;
    // expected (γ_transductive, δ_transductive, γ_discovery, δ_discovery)
    // as functions of (e, h, p)
    let rows: Vec<(ModelName, F, F, F, F, bool)> = vec![
        (EII, |_, _, _| 0, |_, _, _| 1, |_, _, _| 0, |_, _, _| 0, false),
        (VII, |_, _, _| 0, |e, _, _| e, |_, _, _| 0, |_, h, _| h, true),
        (EEI, |_, _, _| 0, |_, _, p| p, |_, _, _| 0, |_, _, _| 0, false),
        (VEI, |_, _, _| 0, |e, _, p| e + p - 1, |_, _, _| 0, |_, h, _| h, true),
        (
            EVI,
            |_, _, _| 0,
            |e, _, p| e * p - (e - 1),
            |_, _, _| 0,
            |_, h, p| h * p - h,
            true,
        ),
        (VVI, |_, _, _| 0, |e, _, p| e * p, |_, _, _| 0, |_, h, p| h * p, true),
        (
            EEE,
            |_, _, p| p * (p - 1) / 2,
            |_, _, p| p,
            |_, _, _| 0,
            |_, _, _| 0,
            false,
        ),
        (
            VEE,
            |_, _, p| p * (p - 1) / 2,
            |e, _, p| e + p - 1,
            |_, _, _| 0,
            |_, h, _| h,
            true,
        ),
        (
            EVE,
            |_, _, p| p * (p - 1) / 2,
            |e, _, p| e * p - (e - 1),
            |_, _, _| 0,
            |_, h, p| h * p - h,
            true,
        ),
        (
            EEV,
            |e, _, p| e * p * (p - 1) / 2,
            |_, _, p| p,
            |_, h, p| h * p * (p - 1) / 2,
            |_, _, _| 0,
            false,
        ),
        (
            VVE,
            |_, _, p| p * (p - 1) / 2,
            |e, _, p| e * p,
            |_, _, _| 0,
            |_, h, p| h * p,
            true,
        ),
        (
            VEV,
            |e, _, p| e * p * (p - 1) / 2,
            |e, _, p| e + p - 1,
            |_, h, p| h * p * (p - 1) / 2,
            |_, h, _| h,
            true,
        ),
        (
            EVV,
            |e, _, p| e * p * (p - 1) / 2,
            |e, _, p| e * p - (e - 1),
            |_, h, p| h * p * (p - 1) / 2,
            |_, h, p| h * p - h,
            true,
        ),
        (
            VVV,
            |e, _, p| e * p * (p - 1) / 2,
            |e, _, p| e * p,
            |_, h, p| h * p * (p - 1) / 2,
            |_, h, p| h * p,
            true,
        ),
    ];
    assert_eq!(rows.len(), 14);
    let mut checked = 0usize;
    for &(model, gt, dt, gi, di, er) in &rows {
        assert_eq!(model.er_required(), er, "{model:?} ER flag");
        for &(e, h, p) in &[(3usize, 1usize, 2usize), (4, 2, 5), (2, 1, 3)] {
            assert_eq!(model.gamma_transductive(e, p), gt(e, h, p), "{model:?} γt");
            assert_eq!(model.delta_transductive(e, p), dt(e, h, p), "{model:?} δt");
            assert_eq!(model.gamma_inductive(h, p), gi(e, h, p), "{model:?} γi");
            assert_eq!(model.delta_inductive(h, p), di(e, h, p), "{model:?} δi");
        }
        checked += 2;
    }

    // with no trimming and a huge cap, RBIC must collapse to classical BIC
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_rel: f64 = 0.0;
    let models = [EII, VII, EEI, VEI, EVI, VVI, EEE, VEE, EEV, VVV];
    for (i, &model) in models.iter().enumerate() {
        let (labeled, unlabeled) = blob_pair(&mut rng, 2, 15, 10);
        let config = FitConfig {
            c: ConstraintSpec::Fixed(1e12),
            n_init: 2,
            n_init_hidden: 2,
            max_iter: 40,
            seed: i as u64,
            ..FitConfig::default()
        };
        let fit = fit_transductive(&config, &labeled, &unlabeled, 2, model).unwrap();
        let k = (2 - 1)
            + 2 * 2
            + model.gamma_transductive(2, 2)
            + model.delta_transductive(2, 2);
        let n_star = (labeled.n() + unlabeled.m()) as f64;
        let bic = 2.0 * fit.loglik - k as f64 * n_star.ln();
        worst_rel = worst_rel.max((fit.rbic - bic).abs() / bic.abs());
    }
    report(
        "3 penalty-table",
        worst_rel <= 1e-6,
        &format!("{checked} table rows matched, worst BIC-limit rel. error {worst_rel:.3e}"),
    );
}

// ---------------------------------------------------------------------
// criterion 4: constrained selection rejects the spurious extra class
// ---------------------------------------------------------------------

/// Three bivariate components with a common correlated covariance; both
/// training and test sets hold 300 draws with all classes observed.
fn spurious_toy(seed: u64) -> (LabeledDataset, UnlabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = [0.35, 0.15, 0.5];
    let mu = [
        DVector::from_vec(vec![0.0, 0.0]),
        DVector::from_vec(vec![4.0, -4.0]),
        DVector::from_vec(vec![5.0, 7.0]),
    ];
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    let chol = sigma.cholesky().unwrap().l();
    let draw = |rng: &mut ChaCha8Rng| -> (usize, DVector<f64>) {
        let u: f64 = rng.gen();
        let class = if u < tau[0] {
            0
        } else if u < tau[0] + tau[1] {
            1
        } else {
            2
        };
        let z = DVector::from_fn(2, |_, _| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        (class, &mu[class] + &chol * z)
    };
    loop {
        let mut train = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..300 {
            let (class, x) = draw(&mut rng);
            train.push(x);
            labels.push(class);
        }
        let mut counts = [0usize; 3];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().any(|&c| c < 3) {
            continue;
        }
        let mut test = Vec::new();
        for _ in 0..300 {
            test.push(draw(&mut rng).1);
        }
        let x = DMatrix::from_fn(300, 2, |i, j| train[i][j]);
        let y = DMatrix::from_fn(300, 2, |i, j| test[i][j]);
        return (
            LabeledDataset::new(x, labels, vec!["1".into(), "2".into(), "3".into()])
                .unwrap(),
            UnlabeledDataset::new(y).unwrap(),
        );
    }
}

#[test]
fn criterion_4_spurious_solution_reproduction() {
    let seeds = 100u64;
    let mut constrained_correct = 0usize;
    let mut spurious_seen = 0usize;
    let mut likelihood_ordering_ok = true;
    for seed in 0..seeds {
        let (labeled, unlabeled) = spurious_toy(4000 + seed);
        let base = FitConfig {
            c: ConstraintSpec::Fixed(10.0),
            n_init: 2,
            n_init_hidden: 8,
            max_iter: 60,
            seed,
            ..FitConfig::default()
        };
        let grid = SearchGrid {
            e_range: vec![3, 4],
            models: vec![ModelName::VVV],
            c_values: vec![ConstraintSpec::Fixed(10.0)],
        };
        let outcome =
            search(&grid, &labeled, &unlabeled, &base, FitApproach::Transductive).unwrap();
        if outcome.table[0].e == 3 {
            constrained_correct += 1;
        }
        let constrained_loglik = outcome.table[0].loglik;

        let unconstrained = FitConfig {
            c: ConstraintSpec::Fixed(1e10),
            n_init_hidden: 20,
            ..base
        };
        if let Ok(fit) =
            fit_transductive(&unconstrained, &labeled, &unlabeled, 4, ModelName::VVV)
        {
            let min_gen_var = fit
                .params
                .sigma
                .iter()
                .map(|d| d.lambda * d.lambda)
                .fold(f64::INFINITY, f64::min);
            if min_gen_var < 1e-8 {
                spurious_seen += 1;
                if fit.loglik <= constrained_loglik {
                    likelihood_ordering_ok = false;
                }
            }
        }
    }
    report(
        "4 spurious-solution",
        constrained_correct >= 95 && spurious_seen >= 20 && likelihood_ordering_ok,
        &format!(
            "constrained selects E=3 in {constrained_correct}/100, spurious class in \
             {spurious_seen}/100 unconstrained fits, likelihood ordering ok: \
             {likelihood_ordering_ok}"
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 5: Monte-Carlo medians on the spherical/diagonal scenarios
// ---------------------------------------------------------------------
#[test]
fn criterion_5_monte_carlo_medians() {
    let ([n1, n2], [m1, m2, m3]) = Proportions::Equal.sizes();
    let (q_l, q_u) = Contamination::Medium.counts();
    let (alpha_l, alpha_u) =
        trimming_levels(q_l, q_u, n1 + n2 + q_l, m1 + m2 + m3 + q_u, 1.0);
    let mut all_ok = true;
    let mut detail = String::new();
    for (cov, model) in [
        (CovarianceScenario::Eii, ModelName::EII),
        (CovarianceScenario::Eei, ModelName::EEI),
    ] {
        for approach in [FitApproach::Transductive, FitApproach::Inductive] {
            let scenario = ScenarioSpec {
                covariance_scenario: cov,
                proportions: Proportions::Equal,
                contamination: Contamination::Medium,
                seed: 0,
            };
            let method = MethodConfig {
                grid: SearchGrid {
                    e_range: vec![3],
                    models: vec![model],
                    c_values: vec![ConstraintSpec::Auto { multiplier: 1.0 }],
                },
                config: FitConfig {
                    alpha_l,
                    alpha_u,
                    c: ConstraintSpec::Auto { multiplier: 1.0 },
                    n_init: 2,
                    n_init_hidden: 3,
                    max_iter: 60,
                    ..FitConfig::default()
                },
                approach,
            };
            let rep = run_monte_carlo(&scenario, &method, 100, 50).unwrap();
            let s = &rep.summary;
            let ok = s.pct_label_noise.median >= 0.85
                && s.pct_hidden_group.median >= 0.90
                && s.ari.median >= 0.90;
            all_ok &= ok;
            detail.push_str(&format!(
                "[{cov:?}/{approach:?}: noise {:.2} hidden {:.2} ari {:.2}] ",
                s.pct_label_noise.median, s.pct_hidden_group.median, s.ari.median
            ));
        }
    }
    report("5 monte-carlo-medians", all_ok, detail.trim());
}

// ---------------------------------------------------------------------
// criterion 6: the grid search recovers the generating model modally
// ---------------------------------------------------------------------
#[test]
fn criterion_6_model_selection_recovery() {
    let ([n1, n2], [m1, m2, m3]) = Proportions::Equal.sizes();
    let (q_l, q_u) = Contamination::Medium.counts();
    let (alpha_l, alpha_u) =
        trimming_levels(q_l, q_u, n1 + n2 + q_l, m1 + m2 + m3 + q_u, 1.0);
    let grid = SearchGrid {
        e_range: vec![2, 3, 4],
        models: ALL_MODELS.to_vec(),
        c_values: vec![ConstraintSpec::Auto { multiplier: 1.0 }],
    };
    let mut hits = 0usize;
    let b = 100u64;
    for rep in 0..b {
        let scenario = ScenarioSpec {
            covariance_scenario: CovarianceScenario::Eii,
            proportions: Proportions::Equal,
            contamination: Contamination::Medium,
            seed: 6000 + rep,
        };
        let (labeled, unlabeled, _) =
            raedda_core::generate_scenario(&scenario).unwrap();
        let config = FitConfig {
            alpha_l,
            alpha_u,
            c: ConstraintSpec::Auto { multiplier: 1.0 },
            n_init: 2,
            n_init_hidden: 2,
            max_iter: 30,
            seed: rep,
            ..FitConfig::default()
        };
        let outcome =
            search(&grid, &labeled, &unlabeled, &config, FitApproach::Transductive)
                .unwrap();
        if outcome.table[0].model == ModelName::EII && outcome.table[0].e == 3 {
            hits += 1;
        }
    }
    report(
        "6 model-selection",
        hits >= 80,
        &format!("(EII, E=3) selected in {hits}/{b} replicates"),
    );
}

// ---------------------------------------------------------------------
// criterion 7: under-trimming causes spurious groups and worse ARI
// ---------------------------------------------------------------------
#[test]
fn criterion_7_sensitivity_trend() {
    let ([n1, n2], [m1, m2, m3]) = Proportions::Equal.sizes();
    let (q_l, q_u) = Contamination::Medium.counts();
    let n = n1 + n2 + q_l;
    let m = m1 + m2 + m3 + q_u;
    let scenario = ScenarioSpec {
        covariance_scenario: CovarianceScenario::Evv,
        proportions: Proportions::Equal,
        contamination: Contamination::Medium,
        seed: 0,
    };
    let mut all_ok = true;
    let mut detail = String::new();
    for c_mult in [1.0, 5.0, 50.0] {
        let mut cells = Vec::new();
        for trim_mult in [0.5, 1.0] {
            let (alpha_l, alpha_u) = trimming_levels(q_l, q_u, n, m, trim_mult);
            let method = MethodConfig {
                grid: SearchGrid {
                    e_range: vec![2, 3, 4],
                    models: vec![ModelName::EVV],
                    c_values: vec![ConstraintSpec::Auto { multiplier: c_mult }],
                },
                config: FitConfig {
                    alpha_l,
                    alpha_u,
                    c: ConstraintSpec::Auto { multiplier: c_mult },
                    n_init: 2,
                    n_init_hidden: 3,
                    max_iter: 40,
                    ..FitConfig::default()
                },
                approach: FitApproach::Transductive,
            };
            let rep = run_monte_carlo(&scenario, &method, 50, 70).unwrap();
            let extra: usize = rep
                .hidden_count_histogram
                .iter()
                .filter(|(&h, _)| h > 1)
                .map(|(_, &count)| count)
                .sum();
            cells.push((extra, rep.summary.ari.median));
        }
        let (low_extra, low_ari) = cells[0];
        let (correct_extra, correct_ari) = cells[1];
        let ok = low_extra > correct_extra && low_ari < correct_ari;
        all_ok &= ok;
        detail.push_str(&format!(
            "[c×{c_mult}: extra {low_extra}>{correct_extra}, ari {low_ari:.2}<{correct_ari:.2}] "
        ));
    }
    report("7 sensitivity-trend", all_ok, detail.trim());
}

// ---------------------------------------------------------------------
// criterion 8: reductions to the classical supervised/semi-supervised fits
// ---------------------------------------------------------------------

fn reconstruct(d: &EigenDecomposition) -> DMatrix<f64> {
    let a = DMatrix::from_diagonal(&(d.shape.clone() * d.lambda));
    &d.orientation * a * d.orientation.transpose()
}

#[test]
fn criterion_8_reduction_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let (labeled, unlabeled) = blob_pair(&mut rng, 2, 25, 20);
    let n = labeled.n();
    let m = unlabeled.m();
    let p = 2usize;
    let g = 2usize;

    // per-class maximum-likelihood moments: the supervised closed form
    let mut counts = vec![0.0; g];
    let mut means = vec![DVector::zeros(p); g];
    for i in 0..n {
        counts[labeled.labels[i]] += 1.0;
        means[labeled.labels[i]] += labeled.row(i);
    }
    for k in 0..g {
        means[k] /= counts[k];
    }
    let mut covs = vec![DMatrix::zeros(p, p); g];
    for i in 0..n {
        let k = labeled.labels[i];
        let d = labeled.row(i) - &means[k];
        covs[k] += &d * d.transpose();
    }
    for k in 0..g {
        covs[k] /= counts[k];
    }

    // untrimmed learning phase must equal the closed form
    let learned = fit_learning_phase(&labeled, ModelName::VVV, 0.0, 4, 0).unwrap();
    let mut worst_learning: f64 = 0.0;
    for k in 0..g {
        worst_learning = worst_learning.max((&learned.params_bar.mu[k] - &means[k]).abs().max());
        worst_learning = worst_learning
            .max((reconstruct(&learned.params_bar.sigma[k]) - &covs[k]).abs().max());
        worst_learning =
            worst_learning.max((learned.params_bar.tau[k] - counts[k] / n as f64).abs());
    }

    // untrimmed transductive EM at E = G must follow the classical
    // semi-supervised update, iteration by iteration, from the supervised
    // closed-form start
    let mut params = raedda_core::MixtureParameters {
        tau: counts.iter().map(|&c| c / n as f64).collect(),
        mu: means.clone(),
        sigma: covs
            .iter()
            .map(|s| raedda_core::decompose(s).unwrap())
            .collect(),
        g,
        model: ModelName::VVV,
    };
    let mut oracle_tau = params.tau.clone();
    let mut oracle_mu = means.clone();
    let mut oracle_cov = covs.clone();
    let zeta = vec![true; n];
    let phi = vec![true; m];
    let mut worst_lockstep: f64 = 0.0;
    for _ in 0..60 {
        let posteriors = e_step(&params, &unlabeled, &phi).unwrap();
        let (next, _) = m_step(
            &labeled,
            &unlabeled,
            &zeta,
            &phi,
            &posteriors,
            ModelName::VVV,
            1e12,
            None,
        )
        .unwrap();
        // independent update coded from the classical formulas
        let mut resp = DMatrix::zeros(m, g);
        for i in 0..m {
            let y = unlabeled.row(i);
            let mut terms = Vec::with_capacity(g);
            for k in 0..g {
                let inv = oracle_cov[k].clone().try_inverse().unwrap();
                let det = oracle_cov[k].determinant();
                let d = &y - &oracle_mu[k];
                let quad = (d.transpose() * inv * &d)[(0, 0)];
                terms.push(
                    oracle_tau[k].ln()
                        - 0.5
                            * (p as f64 * (2.0 * std::f64::consts::PI).ln()
                                + det.ln()
                                + quad),
                );
            }
            let z = terms.iter().cloned().fold(f64::MIN, f64::max);
            let total: f64 = terms.iter().map(|t| (t - z).exp()).sum();
            for k in 0..g {
                resp[(i, k)] = (terms[k] - z).exp() / total;
            }
        }
        for k in 0..g {
            let soft: f64 = (0..m).map(|i| resp[(i, k)]).sum();
            let weight = counts[k] + soft;
            oracle_tau[k] = weight / (n + m) as f64;
            let mut mean = means[k].clone() * counts[k];
            for i in 0..m {
                mean += unlabeled.row(i) * resp[(i, k)];
            }
            mean /= weight;
            let mut cov = DMatrix::zeros(p, p);
            for i in 0..n {
                if labeled.labels[i] == k {
                    let d = labeled.row(i) - &mean;
                    cov += &d * d.transpose();
                }
            }
            for i in 0..m {
                let d = unlabeled.row(i) - &mean;
                cov += &d * d.transpose() * resp[(i, k)];
            }
            oracle_mu[k] = mean;
            oracle_cov[k] = cov / weight;
        }
        for k in 0..g {
            worst_lockstep = worst_lockstep.max((next.tau[k] - oracle_tau[k]).abs());
            worst_lockstep =
                worst_lockstep.max((&next.mu[k] - &oracle_mu[k]).abs().max());
            worst_lockstep = worst_lockstep
                .max((reconstruct(&next.sigma[k]) - &oracle_cov[k]).abs().max());
        }
        params = next;
    }
    report(
        "8 reduction-identities",
        worst_learning <= 1e-12 && worst_lockstep <= 1e-10,
        &format!(
            "supervised closed-form gap {worst_learning:.3e}, semi-supervised lockstep \
             gap {worst_lockstep:.3e}"
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 9: determinism and artifact persistence
// ---------------------------------------------------------------------
#[test]
fn criterion_9_determinism_and_persistence() {
    let mut jsons = Vec::new();
    for _ in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let (labeled, unlabeled) = blob_pair(&mut rng, 2, 15, 12);
        let config = FitConfig {
            alpha_l: 0.05,
            alpha_u: 0.1,
            c: ConstraintSpec::Fixed(20.0),
            n_init: 3,
            n_init_hidden: 4,
            seed: 91,
            ..FitConfig::default()
        };
        let fit = fit_transductive(&config, &labeled, &unlabeled, 3, ModelName::VVI).unwrap();
        let artifact = ModelArtifact::from_transductive(&fit, &labeled, &config);
        jsons.push(artifact.to_json().unwrap());
    }
    let identical = jsons[0] == jsons[1];
    let back = ModelArtifact::from_json(&jsons[0]).unwrap();
    let round_trip = back.to_json().unwrap() == jsons[0];
    report(
        "9 determinism-persistence",
        identical && round_trip,
        &format!("repeat-identical: {identical}, round-trip bit-exact: {round_trip}"),
    );
}

// ---------------------------------------------------------------------
// small-sample replica: two known classes, one hidden, two mislabels
// ---------------------------------------------------------------------
#[test]
fn criterion_10_small_sample_replica() {
    let seeds = 100u64;
    let mut trans_ok = 0usize;
    let mut ind_ok = 0usize;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let draw = |rng: &mut ChaCha8Rng, cx: f64, cy: f64| -> [f64; 2] {
            let mut z = [0.0; 2];
            for v in z.iter_mut() {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.7;
            }
            [cx + z[0], cy + z[1]]
        };
        let mut train = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..12 {
            train.push(draw(&mut rng, 0.0, 0.0));
            labels.push(0);
        }
        for _ in 0..12 {
            train.push(draw(&mut rng, 7.0, 0.0));
            labels.push(1);
        }
        // two genuine first-class units carry the wrong label
        labels[0] = 1;
        labels[1] = 1;
        let mislabeled = [0usize, 1];
        let mut test = Vec::new();
        for _ in 0..3 {
            test.push(draw(&mut rng, 0.0, 0.0));
        }
        for _ in 0..3 {
            test.push(draw(&mut rng, 7.0, 0.0));
        }
        for _ in 0..15 {
            test.push(draw(&mut rng, 3.5, 8.0));
        }
        let x = DMatrix::from_fn(train.len(), 2, |i, j| train[i][j]);
        let y = DMatrix::from_fn(test.len(), 2, |i, j| test[i][j]);
        let labeled =
            LabeledDataset::new(x, labels, vec!["ni".into(), "ai".into()]).unwrap();
        let unlabeled = UnlabeledDataset::new(y).unwrap();
        let config = FitConfig {
            alpha_l: 0.1,
            alpha_u: 0.1,
            c: ConstraintSpec::Auto { multiplier: 1.5 },
            n_init: 4,
            n_init_hidden: 6,
            max_iter: 60,
            seed,
            ..FitConfig::default()
        };
        let grid = SearchGrid {
            e_range: vec![2, 3, 4],
            models: vec![ModelName::VVI],
            c_values: vec![ConstraintSpec::Auto { multiplier: 1.5 }],
        };
        if let Ok(outcome) =
            search(&grid, &labeled, &unlabeled, &config, FitApproach::Transductive)
        {
            if let SearchFit::Transductive(fit) = &outcome.best {
                if outcome.table[0].e == 3
                    && mislabeled.iter().all(|&i| !fit.trimming.zeta[i])
                {
                    trans_ok += 1;
                }
            }
        }
        if let Ok(outcome) =
            search(&grid, &labeled, &unlabeled, &config, FitApproach::Inductive)
        {
            if let SearchFit::Inductive(ind) = &outcome.best {
                if outcome.table[0].e == 3
                    && mislabeled.iter().all(|&i| !ind.learned.zeta[i])
                {
                    ind_ok += 1;
                }
            }
        }
    }
    report(
        "10 small-sample-replica",
        trans_ok >= 90 && ind_ok >= 90,
        &format!("transductive {trans_ok}/100, inductive {ind_ok}/100"),
    );
}

// keep the penalty-spec surface exercised from the integration side
#[test]
fn penalty_spec_public_surface() {
    let spec =
        PenaltySpec::new(ModelName::EII, 3, 2, 4, 100.0, 500, Approach::Transductive)
            .unwrap();
    assert!(spec.v() > 0.0);
}
