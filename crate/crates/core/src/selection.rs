//! Robust information criterion: penalty accounting and model/class-count
//! search.

use serde::{Deserialize, Serialize};

use crate::error::{RaeddaError, Result};
use crate::model::ModelName;

/// Which estimation procedure a penalty is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    Transductive,
    /// Discovery phase of the inductive procedure: only hidden-group
    /// parameters are free.
    InductiveDiscovery,
}

/// Parameter-count ledger entering the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kappa: usize,
    pub gamma: usize,
    pub delta: usize,
    pub c: f64,
    pub n_star: usize,
    pub approach: Approach,
}

impl PenaltySpec {
    pub fn new(
        model: ModelName,
        e: usize,
        g: usize,
        p: usize,
        c: f64,
        n_star: usize,
        approach: Approach,
    ) -> Result<Self> {
        if c < 1.0 {
            return Err(RaeddaError::InvalidConstraint(c));
        }
        let h = e - g;
        let (kappa, gamma, delta) = match approach {
            Approach::Transductive => (
                e * p + (e - 1),
                model.gamma_transductive(e, p),
                model.delta_transductive(e, p),
            ),
            Approach::InductiveDiscovery => (
                h * p + (e - 1),
                model.gamma_inductive(h, p),
                model.delta_inductive(h, p),
            ),
        };
        Ok(PenaltySpec {
            kappa,
            gamma,
            delta,
            c,
            n_star,
            approach,
        })
    }

    /// Effective free-parameter count
    /// `v = κ + γ + (δ − 1)(1 − 1/c) + 1`.
    pub fn v(&self) -> f64 {
        self.kappa as f64
            + self.gamma as f64
            + (self.delta as f64 - 1.0) * (1.0 - 1.0 / self.c)
            + 1.0
    }
}

/// Effective free-parameter count for a model/approach pair.
pub fn penalty(
    model: ModelName,
    e: usize,
    g: usize,
    p: usize,
    c: f64,
    approach: Approach,
) -> Result<f64> {
    Ok(PenaltySpec::new(model, e, g, p, c, 1, approach)?.v())
}

/// `RBIC = 2·ℓ_trim − v·log(n*)`.
pub fn rbic(loglik_trim: f64, v: f64, n_star: usize) -> f64 {
    2.0 * loglik_trim - v * (n_star as f64).ln()
}

use rayon::prelude::*;

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::inductive::{fit_inductive, fit_learning_phase, InductiveFit};
use crate::transductive::{
    fit_transductive, kept_count, ConstraintSpec, FitConfig, FitResult,
};

/// Which full estimation pipeline a search drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitApproach {
    Transductive,
    Inductive,
}

/// Candidate axes of a model-selection search. Every cell shares the
/// trimming levels carried by the [`FitConfig`]; rankings across differing
/// trimming levels are refused.
#[derive(Debug, Clone)]
pub struct SearchGrid {
    pub e_range: Vec<usize>,
    pub models: Vec<ModelName>,
    pub c_values: Vec<ConstraintSpec>,
}

/// One scored cell of the search.
#[derive(Debug, Clone)]
pub struct SearchCell {
    pub model: ModelName,
    pub e: usize,
    /// resolved constraint actually enforced
    pub c: f64,
    pub rbic: f64,
    pub loglik: f64,
    pub converged: bool,
    pub alpha_l: f64,
    pub alpha_u: f64,
}

/// The winning fit of a search.
#[derive(Debug, Clone)]
pub enum SearchFit {
    Transductive(FitResult),
    Inductive(InductiveFit),
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// scored cells ranked best-first
    pub table: Vec<SearchCell>,
    pub best: SearchFit,
    /// failure descriptions for cells that produced no fit
    pub failures: Vec<String>,
}

/// Best-first ordering: larger RBIC wins; ties prefer the simpler model,
/// then fewer classes, then the smaller constraint.
fn rank_key(cell: &SearchCell) -> (f64, usize, usize, f64) {
    (cell.rbic, cell.model.complexity_rank(), cell.e, cell.c)
}

fn sort_cells(cells: &mut [(SearchCell, usize)]) {
    cells.sort_by(|(a, _), (b, _)| {
        let ka = rank_key(a);
        let kb = rank_key(b);
        kb.0
            .partial_cmp(&ka.0)
            .unwrap()
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
            .then(ka.3.partial_cmp(&kb.3).unwrap())
    });
}

/// Refuses to rank cells fitted under different trimming levels.
pub fn check_comparable(cells: &[SearchCell]) -> Result<()> {
    if let Some(first) = cells.first() {
        for c in cells.iter().skip(1) {
            if c.alpha_l != first.alpha_l || c.alpha_u != first.alpha_u {
                return Err(RaeddaError::ConfigError(format!(
                    "cannot rank fits with different trimming levels: \
                     ({}, {}) vs ({}, {})",
                    first.alpha_l, first.alpha_u, c.alpha_l, c.alpha_u
                )));
            }
        }
    }
    Ok(())
}

/// Fits every grid cell and ranks the results by RBIC.
///
/// For the inductive approach the learning-phase model is first selected
/// by RBIC on the labelled set alone; the discovery search then covers the
/// models reachable from that choice.
pub fn search(
    grid: &SearchGrid,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    config: &FitConfig,
    approach: FitApproach,
) -> Result<SearchOutcome> {
    if grid.e_range.is_empty() || grid.models.is_empty() || grid.c_values.is_empty() {
        return Err(RaeddaError::ConfigError("empty search grid".into()));
    }

    match approach {
        FitApproach::Transductive => {
            let cells: Vec<(ModelName, usize, ConstraintSpec)> = grid
                .models
                .iter()
                .flat_map(|&m| {
                    grid.e_range.iter().flat_map(move |&e| {
                        grid.c_values.iter().map(move |&c| (m, e, c))
                    })
                })
                .collect();
            let results: Vec<(usize, std::result::Result<(SearchCell, FitResult), String>)> =
                cells
                    .par_iter()
                    .enumerate()
                    .map(|(i, &(model, e, c))| {
                        let cfg = FitConfig { c, ..config.clone() };
                        let out = fit_transductive(&cfg, labeled, unlabeled, e, model)
                            .map(|fit| {
                                (
                                    SearchCell {
                                        model,
                                        e,
                                        c: fit.c,
                                        rbic: fit.rbic,
                                        loglik: fit.loglik,
                                        converged: fit.converged,
                                        alpha_l: config.alpha_l,
                                        alpha_u: config.alpha_u,
                                    },
                                    fit,
                                )
                            })
                            .map_err(|err| format!("{model} E={e}: {err}"));
                        (i, out)
                    })
                    .collect();
            collect_outcome(results, SearchFit::Transductive)
        }
        FitApproach::Inductive => {
            // block 1: learning model by RBIC on the labelled set
            let n_star = kept_count(labeled.n(), config.alpha_l);
            let mut learning_scores: Vec<(f64, ModelName)> = Vec::new();
            let mut failures = Vec::new();
            for &model in &grid.models {
                match fit_learning_phase(
                    labeled,
                    model,
                    config.alpha_l,
                    config.n_init,
                    config.seed,
                ) {
                    Ok(learned) => {
                        let pb = &learned.params_bar;
                        let ll: f64 = (0..labeled.n())
                            .filter(|&i| learned.zeta[i])
                            .map(|i| {
                                let g = labeled.labels[i];
                                pb.tau[g].ln()
                                    + crate::density::gaussian_log_density(
                                        &labeled.row(i),
                                        &pb.mu[g],
                                        &pb.sigma[g],
                                    )
                            })
                            .sum();
                        let spec = PenaltySpec::new(
                            model,
                            labeled.g,
                            labeled.g,
                            labeled.p(),
                            1e12,
                            n_star,
                            Approach::Transductive,
                        )?;
                        learning_scores.push((rbic(ll, spec.v(), n_star), model));
                    }
                    Err(err) => failures.push(format!("learning {model}: {err}")),
                }
            }
            learning_scores.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.complexity_rank().cmp(&b.1.complexity_rank()))
            });
            let learning_model = learning_scores
                .first()
                .map(|&(_, m)| m)
                .ok_or(RaeddaError::SearchFailure(failures.clone()))?;

            // block 2: discovery over reachable models
            let allowed = learning_model.allowed_discovery_models();
            let discovery_models: Vec<ModelName> = grid
                .models
                .iter()
                .copied()
                .filter(|m| allowed.contains(m))
                .collect();
            let cells: Vec<(ModelName, usize, ConstraintSpec)> = discovery_models
                .iter()
                .flat_map(|&m| {
                    grid.e_range.iter().flat_map(move |&e| {
                        grid.c_values.iter().map(move |&c| (m, e, c))
                    })
                })
                .collect();
            if cells.is_empty() {
                return Err(RaeddaError::SearchFailure(vec![format!(
                    "no grid model reachable from learning model {learning_model}"
                )]));
            }
            let results: Vec<(usize, std::result::Result<(SearchCell, InductiveFit), String>)> =
                cells
                    .par_iter()
                    .enumerate()
                    .map(|(i, &(model, e, c))| {
                        let cfg = FitConfig { c, ..config.clone() };
                        let out =
                            fit_inductive(&cfg, labeled, unlabeled, e, learning_model, model)
                                .map(|ind| {
                                    (
                                        SearchCell {
                                            model,
                                            e,
                                            c: ind.fit.c,
                                            rbic: ind.fit.rbic,
                                            loglik: ind.fit.loglik,
                                            converged: ind.fit.converged,
                                            alpha_l: config.alpha_l,
                                            alpha_u: config.alpha_u,
                                        },
                                        ind,
                                    )
                                })
                                .map_err(|err| format!("{model} E={e}: {err}"));
                        (i, out)
                    })
                    .collect();
            let mut outcome = collect_outcome(results, SearchFit::Inductive)?;
            outcome.failures.splice(0..0, failures);
            Ok(outcome)
        }
    }
}

fn collect_outcome<T>(
    results: Vec<(usize, std::result::Result<(SearchCell, T), String>)>,
    wrap: fn(T) -> SearchFit,
) -> Result<SearchOutcome> {
    let mut scored: Vec<(SearchCell, usize)> = Vec::new();
    let mut fits: Vec<Option<T>> = Vec::new();
    let mut failures = Vec::new();
    for (_, res) in results {
        match res {
            Ok((cell, fit)) => {
                scored.push((cell, fits.len()));
                fits.push(Some(fit));
            }
            Err(msg) => failures.push(msg),
        }
    }
    if scored.is_empty() {
        return Err(RaeddaError::SearchFailure(failures));
    }
    check_comparable(&scored.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>())?;
    sort_cells(&mut scored);
    let best_fit_idx = scored[0].1;
    let best = wrap(fits[best_fit_idx].take().unwrap());
    Ok(SearchOutcome {
        table: scored.into_iter().map(|(c, _)| c).collect(),
        best,
        failures,
    })
}
