//! Run configuration: a flat TOML file merged with command-line flags.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eventlens::evalharness::{ExperimentConfig, FusionParams, ScoringParams};
use eventlens::eventmine::MineParams;
use eventlens::fusion::{ModelKind, TreeParams};
use eventlens::rwrgraph::RwrParams;
use eventlens::scorers::{FeatureKind, PopularityMode};

/// Every key is optional; unset keys fall back to defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: Option<PathBuf>,
    pub checkins: Option<PathBuf>,
    pub venues: Option<PathBuf>,
    pub social: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub timezone_offset_minutes: Option<i32>,

    pub top_k: Option<usize>,
    pub radius_m: Option<f64>,
    pub threshold_factor: Option<f64>,

    pub features: Option<Vec<String>>,
    pub popularity_mode: Option<PopularityMode>,
    pub alpha: Option<f64>,
    pub rwr_k: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,

    pub n_folds: Option<usize>,
    pub seed: Option<u64>,
    pub ndcg_n: Option<usize>,
    pub accuracy_pcts: Option<Vec<f64>>,
    pub event_pct: Option<f64>,
    pub n_permutations: Option<usize>,

    pub model: Option<String>,
    pub with_rwr: Option<bool>,
    pub lambda: Option<f64>,
    pub n_negatives: Option<usize>,
    pub min_leaf: Option<usize>,
    pub sd_threshold: Option<f64>,
    pub max_depth: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e.message()))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(
            self, top, corpus_dir, checkins, venues, social, events, timezone_offset_minutes, top_k, radius_m,
            threshold_factor, features, popularity_mode, alpha, rwr_k, tolerance, max_iterations, n_folds, seed,
            ndcg_n, accuracy_pcts, event_pct, n_permutations, model, with_rwr, lambda, n_negatives, min_leaf,
            sd_threshold, max_depth,
        );
        self
    }

    /// Checks every value against the preconditions of the stage that uses it.
    pub fn resolve(&self) -> Result<Resolved, String> {
        let corpus = self.corpus_paths()?;
        let mine = MineParams {
            top_k: self.top_k.unwrap_or(MineParams::default().top_k),
            radius_m: self.radius_m.unwrap_or(MineParams::default().radius_m),
            threshold_factor: self.threshold_factor.unwrap_or(MineParams::default().threshold_factor),
        };
        if mine.top_k < 1 {
            return Err("top_k must be >= 1".into());
        }
        if !(mine.radius_m >= 0.0) || !(mine.threshold_factor > 0.0) {
            return Err("radius_m must be >= 0 and threshold_factor > 0".into());
        }
        let features = match &self.features {
            None => FeatureKind::ALL.to_vec(),
            Some(names) => {
                let mut out = Vec::new();
                for n in names {
                    let f: FeatureKind = n.parse().map_err(|e: eventlens::Error| e.to_string())?;
                    if !out.contains(&f) {
                        out.push(f);
                    }
                }
                if out.is_empty() {
                    return Err("features must not be empty".into());
                }
                out
            }
        };
        let rwr = RwrParams {
            alpha: self.alpha.unwrap_or(RwrParams::default().alpha),
            tolerance: self.tolerance.unwrap_or(RwrParams::default().tolerance),
            max_iterations: self.max_iterations.unwrap_or(RwrParams::default().max_iterations),
        };
        if !(rwr.tolerance > 0.0) || rwr.max_iterations < 1 {
            return Err("tolerance must be > 0 and max_iterations >= 1".into());
        }
        let scoring = ScoringParams {
            rwr,
            rwr_k: self.rwr_k.unwrap_or(ScoringParams::default().rwr_k),
            popularity_mode: self.popularity_mode.unwrap_or_default(),
        };
        let fusion_default = FusionParams::default();
        let tree = TreeParams {
            min_leaf: self.min_leaf.unwrap_or(fusion_default.tree.min_leaf),
            sd_threshold: self.sd_threshold.unwrap_or(fusion_default.tree.sd_threshold),
            max_depth: self.max_depth.or(fusion_default.tree.max_depth),
            lambda: self.lambda.unwrap_or(fusion_default.tree.lambda),
        };
        let fusion = FusionParams {
            lambda: self.lambda.unwrap_or(fusion_default.lambda),
            n_negatives: self.n_negatives.unwrap_or(fusion_default.n_negatives),
            tree,
        };
        if !(fusion.lambda >= 0.0) || !(tree.sd_threshold >= 0.0) {
            return Err("lambda and sd_threshold must be >= 0".into());
        }
        let model = match &self.model {
            None => ModelKind::ModelTree,
            Some(s) => s.parse().map_err(|e: eventlens::Error| e.to_string())?,
        };
        let d = ExperimentConfig::default();
        let experiment = ExperimentConfig {
            n_folds: self.n_folds.unwrap_or(d.n_folds),
            seed: self.seed.unwrap_or(d.seed),
            ndcg_n: self.ndcg_n.unwrap_or(d.ndcg_n),
            accuracy_pcts: self.accuracy_pcts.clone().unwrap_or(d.accuracy_pcts),
            event_pct: self.event_pct.unwrap_or(d.event_pct),
            strategies: d.strategies,
            scoring,
            fusion,
            niche: false,
            n_permutations: self.n_permutations.unwrap_or(d.n_permutations),
        };
        experiment.validate().map_err(|e| e.to_string())?;
        Ok(Resolved {
            corpus,
            timezone_offset_minutes: self.timezone_offset_minutes.unwrap_or(0),
            events: self.events.clone(),
            mine,
            features,
            model,
            with_rwr: self.with_rwr.unwrap_or(true),
            experiment,
        })
    }

    fn corpus_paths(&self) -> Result<CorpusPaths, String> {
        let pick = |explicit: &Option<PathBuf>, file: &str| -> Result<PathBuf, String> {
            match (explicit, &self.corpus_dir) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(dir)) => Ok(dir.join(file)),
                (None, None) => Err(format!("no {file} given: set --corpus or --{}", file.trim_end_matches(".csv"))),
            }
        };
        Ok(CorpusPaths {
            checkins: pick(&self.checkins, "checkins.csv")?,
            venues: pick(&self.venues, "venues.csv")?,
            social: pick(&self.social, "social.csv")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusPaths {
    pub checkins: PathBuf,
    pub venues: PathBuf,
    pub social: PathBuf,
}

/// Fully resolved settings shared by the corpus-consuming subcommands.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub corpus: CorpusPaths,
    pub timezone_offset_minutes: i32,
    pub events: Option<PathBuf>,
    pub mine: MineParams,
    pub features: Vec<FeatureKind>,
    pub model: ModelKind,
    pub with_rwr: bool,
    pub experiment: ExperimentConfig,
}
