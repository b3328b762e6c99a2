//! Robust adaptive model-based discriminant analysis: trimmed,
//! eigenvalue-constrained EM estimation of Gaussian mixture classifiers
//! with discovery of classes absent from the training labels.

pub mod artifact;
pub mod constraint;
pub mod covariance;
pub mod io;
pub mod eigen;
pub mod error;
pub mod dataset;
pub mod density;
pub mod inductive;
pub mod model;
pub mod selection;
pub mod simulation;
pub mod transductive;

pub use constraint::{constrain_eigenvalues, solve_patterned_eigenvalues, EigenPattern};
pub use covariance::{
    mstep_covariances, mstep_discovery, FixedComponents, ScatterAccumulator,
};
pub use eigen::{decompose, eigen_ratio, EigenDecomposition};
pub use error::{RaeddaError, Result};
pub use artifact::{class_display_name, ModelArtifact, Prediction};
pub use dataset::{LabeledDataset, UnlabeledDataset};
pub use inductive::{fit_inductive, InductiveFit, LearnedModel};
pub use io::{load_combined, load_datasets};
pub use model::{Letter, ModelName, ALL_MODELS};
pub use selection::{search, Approach, FitApproach, SearchFit, SearchGrid, SearchOutcome};
pub use simulation::{
    adjusted_rand_index, generate_scenario, run_monte_carlo, score_fit, Contamination,
    CovarianceScenario, MethodConfig, MetricsReport, MonteCarloReport, Proportions,
    ScenarioSpec,
};
pub use transductive::{
    fit_transductive, reassign_trimmed_training, ConstraintSpec, FitConfig, FitResult,
    MixtureParameters,
};
