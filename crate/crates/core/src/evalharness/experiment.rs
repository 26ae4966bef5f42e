//! The cross-validated experiment: per fold, rebuild event-side inputs from
//! the fold's training attendees, score every (user, event) pair, rank events
//! for each held-out user, and aggregate metrics over all lists.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, FoldPlan};
use super::metrics::{ndcg_at, pct_cutoff, PredictionList};
use super::stats::{niche_analysis, NicheInput, NicheReport};
use crate::corpus::{Corpus, UserIdx};
use crate::error::{Error, Result};
use crate::eventmine::{EventIdx, Events};
use crate::fusion::{build_training_set, fit_model_tree, fit_ridge, predict_and_rank, ModelKind, RegressionModel, TreeParams};
use crate::profiles::{EventProfile, Snapshot};
use crate::rng::substream;
use crate::rwrgraph::{rwr, RwrParams, SocioSpatialGraph};
use crate::scorers::{
    category_score, home_distance, popularity, rank_events, social_influence, temporal_distance, FeatureKind, FeatureScore,
    PopularityMode,
};

/// Columns of a [`ScoreMatrix`]: each feature's oriented value, plus the
/// social-influence tie-break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    HomeDistance,
    CategoryScore,
    TemporalDistance,
    Popularity,
    SocialInfluence,
    SocialTieBreak,
    RandomWalk,
}

pub const N_COLUMNS: usize = 7;

impl Column {
    pub const ALL: [Column; N_COLUMNS] = [
        Column::HomeDistance,
        Column::CategoryScore,
        Column::TemporalDistance,
        Column::Popularity,
        Column::SocialInfluence,
        Column::SocialTieBreak,
        Column::RandomWalk,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::SocialTieBreak => "SocialInfluenceTieBreak",
            Column::HomeDistance => FeatureKind::HomeDistance.name(),
            Column::CategoryScore => FeatureKind::CategoryScore.name(),
            Column::TemporalDistance => FeatureKind::TemporalDistance.name(),
            Column::Popularity => FeatureKind::Popularity.name(),
            Column::SocialInfluence => FeatureKind::SocialInfluence.name(),
            Column::RandomWalk => FeatureKind::RandomWalk.name(),
        }
    }

    pub fn of_feature(f: FeatureKind) -> Column {
        match f {
            FeatureKind::HomeDistance => Column::HomeDistance,
            FeatureKind::CategoryScore => Column::CategoryScore,
            FeatureKind::TemporalDistance => Column::TemporalDistance,
            FeatureKind::Popularity => Column::Popularity,
            FeatureKind::SocialInfluence => Column::SocialInfluence,
            FeatureKind::RandomWalk => Column::RandomWalk,
        }
    }

    /// Fusion inputs, with or without the random-walk column.
    pub fn fusion_inputs(with_rwr: bool) -> Vec<Column> {
        Column::ALL
            .into_iter()
            .filter(|&c| with_rwr || c != Column::RandomWalk)
            .collect()
    }
}

/// Oriented scores for every (user, event) pair of one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n_events: usize,
    values: Vec<[f64; N_COLUMNS]>,
}

impl ScoreMatrix {
    pub fn get(&self, u: UserIdx, e: EventIdx) -> &[f64; N_COLUMNS] {
        &self.values[u.index() * self.n_events + e.index()]
    }

    pub fn value(&self, u: UserIdx, e: EventIdx, c: Column) -> f64 {
        self.get(u, e)[c.index()]
    }

    pub fn select(&self, u: UserIdx, e: EventIdx, columns: &[Column]) -> Vec<f64> {
        let row = self.get(u, e);
        columns.iter().map(|c| row[c.index()]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringParams {
    pub rwr: RwrParams,
    /// Categories linked from each event node.
    pub rwr_k: usize,
    pub popularity_mode: PopularityMode,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            rwr: RwrParams::default(),
            rwr_k: 10,
            popularity_mode: PopularityMode::Checkins,
        }
    }
}

/// Per-day profile snapshots (and socio-spatial base graphs) shared by all folds.
pub struct ExperimentContext<'a> {
    corpus: &'a Corpus,
    events: &'a Events,
    params: ScoringParams,
    snapshots: BTreeMap<NaiveDate, Snapshot>,
    graphs: BTreeMap<NaiveDate, SocioSpatialGraph>,
}

impl<'a> ExperimentContext<'a> {
    pub fn new(corpus: &'a Corpus, events: &'a Events, params: ScoringParams, with_rwr: bool) -> Self {
        let mut days: Vec<NaiveDate> = events.records().iter().map(|r| r.day).collect();
        days.sort_unstable();
        days.dedup();
        let built: Vec<(NaiveDate, Snapshot, Option<SocioSpatialGraph>)> = days
            .par_iter()
            .map(|&d| {
                let snap = Snapshot::build(corpus, d);
                let graph = with_rwr.then(|| SocioSpatialGraph::build_base(corpus, &snap));
                (d, snap, graph)
            })
            .collect();
        let mut snapshots = BTreeMap::new();
        let mut graphs = BTreeMap::new();
        for (d, s, g) in built {
            snapshots.insert(d, s);
            if let Some(g) = g {
                graphs.insert(d, g);
            }
        }
        ExperimentContext {
            corpus,
            events,
            params,
            snapshots,
            graphs,
        }
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn events(&self) -> &Events {
        self.events
    }

    pub fn snapshot(&self, e: EventIdx) -> &Snapshot {
        &self.snapshots[&self.events.get(e).day]
    }

    /// Event profile from `inputs`; an empty input set gives an empty vector.
    pub fn event_profile(&self, e: EventIdx, inputs: &[UserIdx]) -> Result<EventProfile> {
        let rec = self.events.get(e);
        match self.snapshot(e).event_profile(&rec.event_id, inputs) {
            Err(Error::EmptyTraining) => Ok(EventProfile {
                event_id: rec.event_id.clone(),
                category_vector: Default::default(),
                built_from: vec![],
            }),
            other => other,
        }
    }

    /// Every feature for every user against event `e`, with event-side inputs
    /// (event profile, social counts, graph event arcs) drawn from `inputs`.
    /// Indexed by user; the random walk is included only when the context
    /// was built with graphs.
    pub fn score_event(&self, e: EventIdx, inputs: &[UserIdx]) -> Result<Vec<Vec<FeatureScore>>> {
        let mut inputs = inputs.to_vec();
        inputs.sort_unstable();
        inputs.dedup();
        let rec = self.events.get(e);
        let snap = self.snapshot(e);
        let profile = self.event_profile(e, &inputs)?;
        let walk = match self.graphs.get(&rec.day) {
            Some(base) => {
                let g = base.with_events(&[(e, &profile)], self.params.rwr_k)?;
                Some(rwr(&g, e, &self.params.rwr)?)
            }
            None => None,
        };
        Ok(self
            .corpus
            .users()
            .map(|u| {
                let up = snap.user(u);
                let mut v = vec![
                    home_distance(self.corpus, up, e, rec),
                    category_score(up, e, &profile),
                    temporal_distance(up, e, rec),
                    popularity(u, e, rec, self.params.popularity_mode),
                    social_influence(self.corpus, u, e, &inputs),
                ];
                if let Some(w) = &walk {
                    let s = w.user_scores()[u.index()];
                    v.push(FeatureScore {
                        feature: FeatureKind::RandomWalk,
                        user: u,
                        event: e,
                        raw: Some(s),
                        oriented: s,
                        tie_break: 0.0,
                    });
                }
                v
            })
            .collect())
    }

    pub fn score(&self, inputs: impl Fn(EventIdx) -> Vec<UserIdx> + Sync) -> Result<ScoreMatrix> {
        let n_events = self.events.len();
        let per_event: Vec<Vec<Vec<FeatureScore>>> = self
            .events
            .indices()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&e| self.score_event(e, &inputs(e)))
            .collect::<Result<_>>()?;
        let mut values = vec![[0.0; N_COLUMNS]; self.corpus.n_users() * n_events];
        for (e, users) in per_event.iter().enumerate() {
            for (u, scores) in users.iter().enumerate() {
                let row = &mut values[u * n_events + e];
                for s in scores {
                    let c = Column::of_feature(s.feature);
                    row[c.index()] = s.oriented;
                    if s.feature == FeatureKind::SocialInfluence {
                        row[Column::SocialTieBreak.index()] = s.tie_break;
                    }
                }
            }
        }
        Ok(ScoreMatrix { n_events, values })
    }

    /// Scores with the fold's leakage-safe event-side inputs.
    pub fn score_fold(&self, plan: &FoldPlan) -> Result<ScoreMatrix> {
        self.score(|e| plan.profile_inputs(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Single(FeatureKind),
    /// Social influence ranked without the centrality tie-break.
    SocialNoTieBreak,
    Random,
    Fused { model: ModelKind, with_rwr: bool },
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Single(f) => f.name().to_owned(),
            Strategy::SocialNoTieBreak => "SocialInfluenceNoTieBreak".to_owned(),
            Strategy::Random => "Random".to_owned(),
            Strategy::Fused { model, with_rwr } => {
                format!("{}{}", model.short_name(), if *with_rwr { "+RWR" } else { "" })
            }
        }
    }

    pub fn needs_rwr(&self) -> bool {
        matches!(
            self,
            Strategy::Single(FeatureKind::RandomWalk) | Strategy::Fused { with_rwr: true, .. }
        )
    }

    pub fn all_fused() -> [Strategy; 4] {
        [
            Strategy::Fused { model: ModelKind::Ridge, with_rwr: false },
            Strategy::Fused { model: ModelKind::ModelTree, with_rwr: false },
            Strategy::Fused { model: ModelKind::Ridge, with_rwr: true },
            Strategy::Fused { model: ModelKind::ModelTree, with_rwr: true },
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let fused = |rest: &str, with_rwr| rest.parse().map(|model| Strategy::Fused { model, with_rwr });
        match lower.as_str() {
            "random" => Ok(Strategy::Random),
            "socialinfluencenotiebreak" | "social-no-tiebreak" | "social_no_tiebreak" => Ok(Strategy::SocialNoTieBreak),
            "lr" | "m5" => fused(&lower, false),
            "lr+rwr" => fused("lr", true),
            "m5+rwr" => fused("m5", true),
            _ => s.parse().map(Strategy::Single),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    pub lambda: f64,
    pub n_negatives: usize,
    /// Tree settings; depth is capped at 4 because fully grown trees with
    /// nearly unregularized leaves overfit the sampled training sets.
    pub tree: TreeParams,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            lambda: 1e-8,
            n_negatives: 15,
            tree: TreeParams {
                max_depth: Some(4),
                ..TreeParams::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_folds: usize,
    pub seed: u64,
    pub ndcg_n: usize,
    pub accuracy_pcts: Vec<f64>,
    /// Cut-off for per-event accuracy.
    pub event_pct: f64,
    pub strategies: Vec<Strategy>,
    pub scoring: ScoringParams,
    pub fusion: FusionParams,
    /// Correlate niche scores with random-walk per-event accuracy.
    pub niche: bool,
    pub n_permutations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_folds: 10,
            seed: 0,
            ndcg_n: 10,
            accuracy_pcts: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0],
            event_pct: 5.0,
            strategies: FeatureKind::ALL.into_iter().map(Strategy::Single).chain([Strategy::Random]).collect(),
            scoring: ScoringParams::default(),
            fusion: FusionParams::default(),
            niche: false,
            n_permutations: 10_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_folds < 2 {
            return bad(format!("n_folds must be >= 2, got {}", self.n_folds));
        }
        if self.ndcg_n < 1 {
            return bad("ndcg_n must be >= 1".into());
        }
        for &p in self.accuracy_pcts.iter().chain([&self.event_pct]) {
            if !(p > 0.0 && p <= 100.0) {
                return bad(format!("percentage {p} outside (0, 100]"));
            }
        }
        if self.strategies.is_empty() {
            return bad("no strategies configured".into());
        }
        if !(0.0..1.0).contains(&self.scoring.rwr.alpha) {
            return bad(format!("alpha must be in [0, 1), got {}", self.scoring.rwr.alpha));
        }
        if self.scoring.rwr_k < 1 {
            return bad("rwr_k must be >= 1".into());
        }
        if self.fusion.tree.min_leaf < 1 {
            return bad("min_leaf must be >= 1".into());
        }
        Ok(())
    }

    fn needs_rwr(&self) -> bool {
        self.niche || self.strategies.iter().any(Strategy::needs_rwr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PctPoint {
    pub pct: f64,
    pub accuracy: f64,
}

/// Accuracy@1 over lists whose user has at least two events sharing the same
/// non-zero friend count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieSubset {
    pub n_lists: usize,
    pub accuracy_at_1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub n_lists: usize,
    pub ndcg: f64,
    /// Entry `i` is Accuracy@(i + 1).
    pub accuracy_at_n: Vec<f64>,
    pub accuracy_at_pct: Vec<PctPoint>,
    /// Share of each event's held-out attendees whose list has the event
    /// within the top `event_pct` percent.
    pub per_event_accuracy: BTreeMap<String, f64>,
    pub tie_subset: TieSubset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_folds: usize,
    pub seed: u64,
    pub ndcg_n: usize,
    pub event_pct: f64,
    pub n_events: usize,
    pub strategies: Vec<StrategyReport>,
    pub niche: Option<NicheReport>,
}

impl MetricsReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Accuracy@N as `feature,n,accuracy` rows.
    pub fn write_accuracy_at_n_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "feature,n,accuracy").map_err(io)?;
        for s in &self.strategies {
            for (i, a) in s.accuracy_at_n.iter().enumerate() {
                writeln!(w, "{},{},{}", s.name, i + 1, a).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Accuracy@X% as `feature,pct,accuracy` rows.
    pub fn write_accuracy_at_pct_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "feature,pct,accuracy").map_err(io)?;
        for s in &self.strategies {
            for p in &s.accuracy_at_pct {
                writeln!(w, "{},{},{}", s.name, p.pct, p.accuracy).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub strategy: String,
    pub fold: usize,
    pub model: RegressionModel,
}

/// Running sums for one strategy.
#[derive(Clone, Debug, Default)]
struct Tally {
    n_lists: usize,
    ndcg_sum: f64,
    /// Count of lists whose first relevant event sits at each rank (index 0 = rank 1).
    first_hit: Vec<usize>,
    pct_hits: Vec<usize>,
    /// `(hits, tested)` per event.
    per_event: Vec<(usize, usize)>,
    tie_lists: usize,
    tie_hits: usize,
}

impl Tally {
    fn new(n_events: usize, n_pcts: usize) -> Self {
        Tally {
            first_hit: vec![0; n_events],
            pct_hits: vec![0; n_pcts],
            per_event: vec![(0, 0); n_events],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.n_lists += o.n_lists;
        self.ndcg_sum += o.ndcg_sum;
        self.tie_lists += o.tie_lists;
        self.tie_hits += o.tie_hits;
        for (a, b) in self.first_hit.iter_mut().zip(&o.first_hit) {
            *a += b;
        }
        for (a, b) in self.pct_hits.iter_mut().zip(&o.pct_hits) {
            *a += b;
        }
        for (a, b) in self.per_event.iter_mut().zip(&o.per_event) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }
}

struct FoldOutcome {
    tallies: Vec<Tally>,
    models: Vec<FittedModel>,
}

/// Whether some non-zero friend count is shared by two or more events.
fn has_social_tie(matrix: &ScoreMatrix, u: UserIdx, events: &Events) -> bool {
    let mut counts: Vec<f64> = events
        .indices()
        .map(|e| matrix.value(u, e, Column::SocialInfluence))
        .filter(|&r| r >= 1.0)
        .collect();
    counts.sort_by(f64::total_cmp);
    counts.windows(2).any(|w| w[0] == w[1])
}

fn single_list(matrix: &ScoreMatrix, u: UserIdx, events: &Events, column: Column, tie: Option<Column>) -> Result<PredictionList> {
    let scores: Vec<FeatureScore> = events
        .indices()
        .map(|e| FeatureScore {
            feature: FeatureKind::HomeDistance,
            user: u,
            event: e,
            raw: None,
            oriented: matrix.value(u, e, column),
            tie_break: tie.map_or(0.0, |t| matrix.value(u, e, t)),
        })
        .collect();
    rank_events(u, &scores)
}

fn evaluate_fold(ctx: &ExperimentContext<'_>, plan: &FoldPlan, config: &ExperimentConfig) -> Result<FoldOutcome> {
    let events = ctx.events;
    let n_events = events.len();
    let n_users = ctx.corpus.n_users() as u64;
    let matrix = ctx.score_fold(plan)?;
    let event_cut = pct_cutoff(n_events, config.event_pct);
    let pct_cuts: Vec<usize> = config.accuracy_pcts.iter().map(|&p| pct_cutoff(n_events, p)).collect();

    let mut tallies = Vec::new();
    let mut models = Vec::new();
    for strategy in &config.strategies {
        let fitted = match *strategy {
            Strategy::Fused { model, with_rwr } => {
                let columns = Column::fusion_inputs(with_rwr);
                let names: Vec<String> = columns.iter().map(|c| c.name().to_owned()).collect();
                let instances = build_training_set(plan, events, config.fusion.n_negatives, config.seed, |u, e| {
                    matrix.select(u, e, &columns)
                });
                let m = match model {
                    ModelKind::Ridge => fit_ridge(&instances, &names, config.fusion.lambda)?,
                    ModelKind::ModelTree => fit_model_tree(&instances, &names, &config.fusion.tree)?,
                };
                Some((m, columns, names))
            }
            _ => None,
        };

        let mut t = Tally::new(n_events, pct_cuts.len());
        for &u in &plan.test_users {
            let list = match strategy {
                Strategy::Single(f) => {
                    let tie = (*f == FeatureKind::SocialInfluence).then_some(Column::SocialTieBreak);
                    single_list(&matrix, u, events, Column::of_feature(*f), tie)?
                }
                Strategy::SocialNoTieBreak => single_list(&matrix, u, events, Column::SocialInfluence, None)?,
                Strategy::Random => {
                    let mut order: Vec<EventIdx> = events.indices().collect();
                    let stream = plan.fold_index as u64 * n_users + u64::from(u.0);
                    order.shuffle(&mut substream(config.seed, "random-baseline", stream));
                    PredictionList::new(u, order)
                }
                Strategy::Fused { .. } => {
                    let (m, columns, names) = fitted.as_ref().expect("fused model fitted");
                    let rows: Vec<(EventIdx, Vec<f64>)> = events.indices().map(|e| (e, matrix.select(u, e, columns))).collect();
                    predict_and_rank(m, names, u, &rows)?
                }
            };
            let list = list.with_relevance(events.attended_by(u));

            t.n_lists += 1;
            t.ndcg_sum += ndcg_at(&list, config.ndcg_n);
            let first = list.first_relevant_rank();
            if let Some(r) = first {
                t.first_hit[r - 1] += 1;
            }
            for (hits, &cut) in t.pct_hits.iter_mut().zip(&pct_cuts) {
                if first.is_some_and(|r| r <= cut) {
                    *hits += 1;
                }
            }
            for e in events.indices() {
                if plan.test[e.index()].binary_search(&u).is_ok() {
                    let slot = &mut t.per_event[e.index()];
                    slot.1 += 1;
                    if list.rank_of(e).is_some_and(|r| r <= event_cut) {
                        slot.0 += 1;
                    }
                }
            }
            if has_social_tie(&matrix, u, events) {
                t.tie_lists += 1;
                if first == Some(1) {
                    t.tie_hits += 1;
                }
            }
        }
        tallies.push(t);
        if let Some((m, _, _)) = fitted {
            models.push(FittedModel {
                strategy: strategy.name(),
                fold: plan.fold_index,
                model: m,
            });
        }
    }
    Ok(FoldOutcome { tallies, models })
}

/// Runs the configured strategies over all folds and aggregates the metrics.
pub fn run_experiment(corpus: &Corpus, events: &Events, config: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment_with_models(corpus, events, config).map(|(r, _)| r)
}

/// As [`run_experiment`], also returning every fitted fusion model.
pub fn run_experiment_with_models(
    corpus: &Corpus,
    events: &Events,
    config: &ExperimentConfig,
) -> Result<(MetricsReport, Vec<FittedModel>)> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::InvalidParameter("no events to evaluate".into()));
    }
    let plans = make_folds(events, config.n_folds, config.seed)?;
    let ctx = ExperimentContext::new(corpus, events, config.scoring, config.needs_rwr());
    let outcomes: Vec<FoldOutcome> = plans
        .par_iter()
        .map(|plan| evaluate_fold(&ctx, plan, config))
        .collect::<Result<_>>()?;

    let n_events = events.len();
    let mut totals: Vec<Tally> = config
        .strategies
        .iter()
        .map(|_| Tally::new(n_events, config.accuracy_pcts.len()))
        .collect();
    let mut models = Vec::new();
    for o in outcomes {
        for (t, f) in totals.iter_mut().zip(&o.tallies) {
            t.merge(f);
        }
        models.extend(o.models);
    }

    let strategies: Vec<StrategyReport> = config
        .strategies
        .iter()
        .zip(&totals)
        .map(|(s, t)| {
            let n = t.n_lists.max(1) as f64;
            let mut cum = 0;
            let accuracy_at_n = t
                .first_hit
                .iter()
                .map(|&h| {
                    cum += h;
                    cum as f64 / n
                })
                .collect();
            StrategyReport {
                name: s.name(),
                n_lists: t.n_lists,
                ndcg: t.ndcg_sum / n,
                accuracy_at_n,
                accuracy_at_pct: config
                    .accuracy_pcts
                    .iter()
                    .zip(&t.pct_hits)
                    .map(|(&pct, &h)| PctPoint { pct, accuracy: h as f64 / n })
                    .collect(),
                per_event_accuracy: events
                    .iter()
                    .filter(|(e, _)| t.per_event[e.index()].1 > 0)
                    .map(|(e, r)| {
                        let (h, k) = t.per_event[e.index()];
                        (r.event_id.clone(), h as f64 / k as f64)
                    })
                    .collect(),
                tie_subset: TieSubset {
                    n_lists: t.tie_lists,
                    accuracy_at_1: (t.tie_lists > 0).then(|| t.tie_hits as f64 / t.tie_lists as f64),
                },
            }
        })
        .collect();

    let niche = if config.niche {
        let rwr_name = Strategy::Single(FeatureKind::RandomWalk).name();
        let per_event = match strategies.iter().find(|s| s.name == rwr_name) {
            Some(s) => s.per_event_accuracy.clone(),
            None => {
                // niche analysis needs random-walk accuracy even if not requested
                let mut c = config.clone();
                c.strategies = vec![Strategy::Single(FeatureKind::RandomWalk)];
                c.niche = false;
                run_experiment(corpus, events, &c)?.strategies[0].per_event_accuracy.clone()
            }
        };
        Some(niche_report(&ctx, &per_event, config)?)
    } else {
        None
    };

    Ok((
        MetricsReport {
            n_folds: config.n_folds,
            seed: config.seed,
            ndcg_n: config.ndcg_n,
            event_pct: config.event_pct,
            n_events,
            strategies,
            niche,
        },
        models,
    ))
}

/// Niche scores use each event's profile over all its attendees.
fn niche_report(ctx: &ExperimentContext<'_>, per_event: &BTreeMap<String, f64>, config: &ExperimentConfig) -> Result<NicheReport> {
    let mut profiles = Vec::new();
    for (e, rec) in ctx.events.iter() {
        if let Some(&acc) = per_event.get(&rec.event_id) {
            profiles.push((e, ctx.event_profile(e, &rec.attendees)?, acc));
        }
    }
    let inputs: Vec<NicheInput<'_>> = profiles
        .iter()
        .map(|(e, p, acc)| NicheInput {
            event_id: &ctx.events.get(*e).event_id,
            profile: p,
            category_totals: &ctx.snapshot(*e).category_totals,
            accuracy: *acc,
        })
        .collect();
    niche_analysis(&inputs, config.n_permutations, config.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_timestamp, RawCheckIn, Venue, VenueIdx};
    use crate::eventmine::EventRecord;

    fn ci(user: &str, venue: &str, d: u32, h: u32) -> RawCheckIn {
        RawCheckIn {
            user_id: user.into(),
            venue_id: venue.into(),
            timestamp: parse_timestamp(&format!("2011-05-{d:02}T{h:02}:00:00Z")).unwrap(),
        }
    }

    /// Twelve users, two events far apart; users 0..6 live near event A.
    fn fixture() -> (Corpus, Events) {
        let venues = vec![
            Venue { id: "a".into(), lat: 51.50, lon: -0.12, category: "Bar".into() },
            Venue { id: "b".into(), lat: 51.60, lon: -0.12, category: "Gym".into() },
        ];
        let mut cs = Vec::new();
        let mut edges = Vec::new();
        for i in 0..12 {
            let home = if i < 6 { "a" } else { "b" };
            cs.push(ci(&format!("u{i:02}"), home, 1, 9));
            cs.push(ci(&format!("u{i:02}"), home, 2, 9));
            if i > 0 {
                edges.push((format!("u{:02}", i - 1), format!("u{i:02}")));
            }
        }
        let c = Corpus::from_parts(venues, cs, edges, 0).unwrap();
        let day = NaiveDate::from_ymd_opt(2011, 5, 20).unwrap();
        let mk = |id: &str, v: u32, users: std::ops::Range<u32>| EventRecord {
            event_id: id.into(),
            day,
            anchor_venue: VenueIdx(v),
            places: vec![VenueIdx(v)],
            attendees: users.map(UserIdx).collect(),
            peak_hour: 20,
            popularity: 6,
            anomaly_magnitude: 5.0,
        };
        let ev = Events::new(vec![mk("ev-a", 0, 0..6), mk("ev-b", 1, 6..12)]).unwrap();
        (c, ev)
    }

    #[test]
    fn strategy_names_round_trip() {
        let all: Vec<Strategy> = FeatureKind::ALL
            .into_iter()
            .map(Strategy::Single)
            .chain([Strategy::Random, Strategy::SocialNoTieBreak])
            .chain(Strategy::all_fused())
            .collect();
        for s in all {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
    }

    #[test]
    fn distance_feature_is_perfect_on_separated_events() {
        let (c, ev) = fixture();
        let config = ExperimentConfig {
            n_folds: 3,
            strategies: vec![Strategy::Single(FeatureKind::HomeDistance)],
            ..Default::default()
        };
        let r = run_experiment(&c, &ev, &config).unwrap();
        let s = &r.strategies[0];
        assert_eq!(s.n_lists, 12);
        assert_eq!(s.ndcg, 1.0);
        assert_eq!(s.accuracy_at_n, vec![1.0, 1.0]);
        assert_eq!(s.per_event_accuracy.len(), 2);
    }

    #[test]
    fn metrics_are_bounded_and_curves_monotone() {
        let (c, ev) = fixture();
        let mut strategies: Vec<Strategy> = FeatureKind::ALL.into_iter().map(Strategy::Single).collect();
        strategies.push(Strategy::Random);
        strategies.push(Strategy::SocialNoTieBreak);
        let config = ExperimentConfig { n_folds: 3, strategies, ..Default::default() };
        let r = run_experiment(&c, &ev, &config).unwrap();
        for s in &r.strategies {
            assert!((0.0..=1.0).contains(&s.ndcg));
            assert!(s.accuracy_at_n.windows(2).all(|w| w[0] <= w[1]));
            assert!(s.accuracy_at_pct.windows(2).all(|w| w[0].accuracy <= w[1].accuracy));
            assert_eq!(*s.accuracy_at_n.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn fold_scores_ignore_held_out_users() {
        let (c, ev) = fixture();
        let plans = make_folds(&ev, 3, 1).unwrap();
        let ctx = ExperimentContext::new(&c, &ev, ScoringParams::default(), true);
        let m = ctx.score_fold(&plans[0]).unwrap();
        // no test user's friends-at-event count may include another test user
        for &u in &plans[0].test_users {
            for e in ev.indices() {
                let inputs = plans[0].profile_inputs(e);
                let expected = c.friends(u).iter().filter(|f| inputs.contains(f)).count() as f64;
                assert_eq!(m.value(u, e, Column::SocialInfluence), expected);
            }
        }
    }

    #[test]
    fn run_is_deterministic() {
        let (c, ev) = fixture();
        let config = ExperimentConfig {
            n_folds: 3,
            strategies: Strategy::all_fused().into_iter().chain([Strategy::Random]).collect(),
            ..Default::default()
        };
        let a = serde_json::to_string(&run_experiment(&c, &ev, &config).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&c, &ev, &config).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        let (c, ev) = fixture();
        for bad in [
            ExperimentConfig { n_folds: 1, ..Default::default() },
            ExperimentConfig { ndcg_n: 0, ..Default::default() },
            ExperimentConfig { accuracy_pcts: vec![0.0], ..Default::default() },
            ExperimentConfig { strategies: vec![], ..Default::default() },
        ] {
            assert!(matches!(run_experiment(&c, &ev, &bad), Err(Error::InvalidParameter(_))));
        }
    }
}
