//! Socio-spatial graph over users, place categories and events, and the
//! personalized random walk with restart that scores users for an event.
//!
//! Arc kinds and their raw weights:
//!
//! | arc               | raw weight                                             |
//! |-------------------|--------------------------------------------------------|
//! | user i -> user j  | `1 / |friends(i)|`                                     |
//! | user u -> cat c   | the user's TF-IDF score for `c`                        |
//! | cat c -> user u   | `N_u[c] / max_v N_v[c] * ln(|C| / |cats visited by u|)` |
//! | event e -> cat c  | the event's category score, top `k` categories only     |
//!
//! Each node's out-arcs are then divided by their sum. Nodes with no positive
//! out-weight are dangling; during the walk their mass returns to the event.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{write_jsonl, CategoryIdx, Corpus, UserIdx};
use crate::error::{Error, Result};
use crate::eventmine::{EventIdx, Events};
use crate::profiles::{top_k_categories, EventProfile, Snapshot};
use crate::scorers::{FeatureKind, FeatureScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Node {
    User(UserIdx),
    Category(CategoryIdx),
    Event(EventIdx),
}

/// Row-normalized CSR adjacency. Node ids: users, then categories, then events.
#[derive(Clone, Debug, PartialEq)]
pub struct SocioSpatialGraph {
    n_users: usize,
    n_categories: usize,
    events: Vec<EventIdx>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl SocioSpatialGraph {
    /// User and category layers only, from profiles at one cutoff.
    pub fn build_base(corpus: &Corpus, snapshot: &Snapshot) -> Self {
        let n_users = corpus.n_users();
        let n_categories = corpus.n_categories();
        let ln_c = n_categories as f64;

        let mut rows: Vec<Vec<(u32, f64)>> = corpus
            .users()
            .map(|u| {
                let friends = corpus.friends(u);
                let mut row: Vec<(u32, f64)> = friends
                    .iter()
                    .map(|f| (f.0, 1.0 / friends.len() as f64))
                    .collect();
                row.extend(
                    snapshot
                        .user(u)
                        .category_vector
                        .entries()
                        .iter()
                        .map(|&(c, w)| ((n_users + c.index()) as u32, w)),
                );
                row
            })
            .collect();

        let mut cat_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_categories];
        for p in snapshot.users() {
            let visited = p.category_counts.len() as f64;
            if visited == 0.0 {
                continue;
            }
            let spread = (ln_c / visited).ln();
            for &(c, n) in &p.category_counts {
                let max = snapshot.category_user_max[c.index()];
                let w = f64::from(n) / f64::from(max) * spread;
                cat_rows[c.index()].push((p.user.0, w));
            }
        }
        rows.extend(cat_rows);

        let mut g = SocioSpatialGraph {
            n_users,
            n_categories,
            events: Vec::new(),
            offsets: vec![0],
            targets: Vec::new(),
            weights: Vec::new(),
        };
        for row in rows {
            g.push_row(row);
        }
        g
    }

    /// Copy of `self` with one node per event, linked to the event's top `k`
    /// categories. Events must not already be present.
    pub fn with_events(&self, profiles: &[(EventIdx, &EventProfile)], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let mut g = self.clone();
        for &(e, profile) in profiles {
            if g.events.contains(&e) {
                return Err(Error::DuplicateEvent(profile.event_id.clone()));
            }
            let row = top_k_categories(profile, k)
                .into_iter()
                .map(|(c, w)| ((g.n_users + c.index()) as u32, w))
                .collect();
            g.events.push(e);
            g.push_row(row);
        }
        Ok(g)
    }

    fn push_row(&mut self, row: Vec<(u32, f64)>) {
        let row: Vec<(u32, f64)> = row.into_iter().filter(|&(_, w)| w > 0.0).collect();
        let sum: f64 = row.iter().map(|&(_, w)| w).sum();
        for (t, w) in row {
            self.targets.push(t);
            self.weights.push(w / sum);
        }
        self.offsets.push(self.targets.len());
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn node_id(&self, node: Node) -> Option<usize> {
        match node {
            Node::User(u) => (u.index() < self.n_users).then_some(u.index()),
            Node::Category(c) => (c.index() < self.n_categories).then_some(self.n_users + c.index()),
            Node::Event(e) => self
                .events
                .iter()
                .position(|&x| x == e)
                .map(|i| self.n_users + self.n_categories + i),
        }
    }

    pub fn node(&self, id: usize) -> Node {
        if id < self.n_users {
            Node::User(UserIdx(id as u32))
        } else if id < self.n_users + self.n_categories {
            Node::Category(CategoryIdx((id - self.n_users) as u32))
        } else {
            Node::Event(self.events[id - self.n_users - self.n_categories])
        }
    }

    /// Normalized out-arcs of node `id` as `(target id, probability)`.
    pub fn out_arcs(&self, id: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[id]..self.offsets[id + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&t, &w)| (t as usize, w))
    }

    pub fn is_dangling(&self, id: usize) -> bool {
        self.offsets[id] == self.offsets[id + 1]
    }

    pub fn n_arcs(&self) -> usize {
        self.targets.len()
    }

    /// Writes every arc as a JSON line for external inspection.
    pub fn write_jsonl(&self, path: &Path, corpus: &Corpus, events: &Events) -> Result<()> {
        #[derive(Serialize)]
        struct Arc<'a> {
            src_type: &'static str,
            src_id: &'a str,
            dst_type: &'static str,
            dst_id: &'a str,
            weight: f64,
        }
        let label = |n: Node| -> (&'static str, &str) {
            match n {
                Node::User(u) => ("user", corpus.user_id(u)),
                Node::Category(c) => ("category", corpus.category_name(c)),
                Node::Event(e) => ("event", events.get(e).event_id.as_str()),
            }
        };
        let arcs = (0..self.n_nodes()).flat_map(|s| self.out_arcs(s).map(move |(t, w)| (s, t, w)));
        write_jsonl(
            path,
            arcs.map(|(s, t, w)| {
                let (src_type, src_id) = label(self.node(s));
                let (dst_type, dst_id) = label(self.node(t));
                Arc {
                    src_type,
                    src_id,
                    dst_type,
                    dst_id,
                    weight: w,
                }
            }),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct RwrParams {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RwrParams {
    fn default() -> Self {
        RwrParams {
            alpha: 0.85,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RwrResult {
    pub event: EventIdx,
    pub alpha: f64,
    pub iterations: usize,
    pub residual: f64,
    /// L1 change after each iteration.
    pub residuals: Vec<f64>,
    /// Stationary probability of every node, indexed by node id.
    pub scores: Vec<f64>,
    n_users: usize,
}

impl RwrResult {
    /// Scores of the user nodes, indexed by [`UserIdx`].
    pub fn user_scores(&self) -> &[f64] {
        &self.scores[..self.n_users]
    }
}

/// Power iteration for `x = alpha * P^T x + (1 - alpha) * e_event`, where
/// dangling mass is sent back to the event node, starting from `e_event`.
pub fn rwr(graph: &SocioSpatialGraph, event: EventIdx, params: &RwrParams) -> Result<RwrResult> {
    if !(0.0..1.0).contains(&params.alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0, 1), got {}", params.alpha)));
    }
    let start = graph
        .node_id(Node::Event(event))
        .ok_or_else(|| Error::UnknownEvent(format!("event #{}", event.0)))?;
    let n = graph.n_nodes();
    let alpha = params.alpha;
    let mut x = vec![0.0; n];
    x[start] = 1.0;
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();

    for it in 1..=params.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut dangling = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            if graph.is_dangling(i) {
                dangling += xi;
            } else {
                let m = alpha * xi;
                for (t, w) in graph.out_arcs(i) {
                    next[t] += m * w;
                }
            }
        }
        next[start] += alpha * dangling + (1.0 - alpha);
        let residual: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        residuals.push(residual);
        std::mem::swap(&mut x, &mut next);
        if residual < params.tolerance {
            return Ok(RwrResult {
                event,
                alpha,
                iterations: it,
                residual,
                residuals,
                scores: x,
                n_users: graph.n_users,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iterations,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Random-walk scores for every user and event, with each event's profile
/// built from all of its attendees at the event's cutoff.
pub fn rwr_feature(corpus: &Corpus, events: &Events, k: usize, params: &RwrParams) -> Result<Vec<FeatureScore>> {
    let per_event: Vec<Vec<FeatureScore>> = events
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(e, rec)| {
            let snapshot = Snapshot::build(corpus, rec.day);
            let profile = snapshot.event_profile(&rec.event_id, &rec.attendees)?;
            let graph = SocioSpatialGraph::build_base(corpus, &snapshot).with_events(&[(e, &profile)], k)?;
            let result = rwr(&graph, e, params)?;
            Ok(result
                .user_scores()
                .iter()
                .enumerate()
                .map(|(u, &s)| FeatureScore {
                    feature: FeatureKind::RandomWalk,
                    user: UserIdx(u as u32),
                    event: e,
                    raw: Some(s),
                    oriented: s,
                    tie_break: 0.0,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_event.into_iter().flatten().collect())
}
