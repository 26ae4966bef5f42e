//! Cross-validated evaluation: fold plans, ranking metrics, the experiment
//! driver, and rank-correlation statistics.

mod experiment;
mod folds;
mod metrics;
mod stats;

pub use experiment::{
    run_experiment, run_experiment_with_models, Column, ExperimentConfig, ExperimentContext, FittedModel, FusionParams,
    MetricsReport, PctPoint, ScoreMatrix, ScoringParams, Strategy, StrategyReport, TieSubset, N_COLUMNS,
};
pub use folds::{make_folds, FoldPlan};
pub use metrics::{accuracy_at, accuracy_at_pct, ndcg_at, pct_cutoff, PredictionList};
pub use stats::{
    average_ranks, kendall_tau, niche_analysis, niche_tau, spearman, spearman_permutation_p, NicheEntry, NicheInput,
    NicheReport,
};
