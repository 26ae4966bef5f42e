//! Supervised fusion of feature scores: training-set assembly with sampled
//! negatives, ridge regression, and a model tree with linear leaves.
//!
//! Both learners work on z-standardized inputs. Non-finite inputs (a missing
//! temporal profile) are first replaced by one less than the smallest finite
//! training value of that column.
//!
//! The tree grows binary splits that maximize the standard-deviation reduction
//! `sd(S) - sum |S_i| / |S| * sd(S_i)` and fits a ridge model in every leaf.
//! There is no pruning or smoothing pass.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::UserIdx;
use crate::error::{Error, Result};
use crate::evalharness::{FoldPlan, PredictionList};
use crate::eventmine::{EventIdx, Events};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ridge,
    ModelTree,
}

impl ModelKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::Ridge => "LR",
            ModelKind::ModelTree => "M5",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ridge => "ridge",
            ModelKind::ModelTree => "m5",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridge" | "lr" | "linear" => Ok(ModelKind::Ridge),
            "m5" | "tree" | "model_tree" | "modeltree" => Ok(ModelKind::ModelTree),
            _ => Err(Error::InvalidParameter(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingInstance {
    pub user: UserIdx,
    pub event: EventIdx,
    pub features: Vec<f64>,
    /// +1 if the user attended the event, -1 otherwise.
    pub label: f64,
}

/// One positive per attended event and up to `n_negatives` unattended events
/// drawn uniformly without replacement, for every training user of the fold.
pub fn build_training_set(
    plan: &FoldPlan,
    events: &Events,
    n_negatives: usize,
    seed: u64,
    features: impl Fn(UserIdx, EventIdx) -> Vec<f64>,
) -> Vec<TrainingInstance> {
    let mut out = Vec::new();
    for u in plan.training_users() {
        let attended = events.attended_by(u);
        for &e in &attended {
            out.push(TrainingInstance {
                user: u,
                event: e,
                features: features(u, e),
                label: 1.0,
            });
        }
        let others: Vec<EventIdx> = events.indices().filter(|e| attended.binary_search(e).is_err()).collect();
        let k = n_negatives.min(others.len());
        let stream = ((plan.fold_index as u64) << 32) | u64::from(u.0);
        let mut picked = sample(&mut substream(seed, "negatives", stream), others.len(), k).into_vec();
        picked.sort_unstable();
        for i in picked {
            out.push(TrainingInstance {
                user: u,
                event: others[i],
                features: features(u, others[i]),
                label: -1.0,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Substitute for non-finite inputs, per column.
    pub fill: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]], p: usize) -> Self {
        let mut fill = vec![0.0; p];
        for (j, f) in fill.iter_mut().enumerate() {
            let min = rows.iter().map(|r| r[j]).filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
            *f = if min.is_finite() { min - 1.0 } else { 0.0 };
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col = || rows.iter().map(|r| if r[j].is_finite() { r[j] } else { fill[j] });
            let m = col().sum::<f64>() / n;
            let var = col().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean[j] = m;
            if var.sqrt() > 1e-12 * m.abs().max(1.0) {
                scale[j] = var.sqrt();
            }
        }
        Standardizer { fill, mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let v = if v.is_finite() { v } else { self.fill[j] };
                (v - self.mean[j]) / self.scale[j]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        n: usize,
        model: LinearModel,
    },
    /// Rows with standardized `feature <= threshold` go left.
    Split {
        n: usize,
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn leaf_for(&self, z: &[f64]) -> &LinearModel {
        match self {
            TreeNode::Leaf { model, .. } => model,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if z[*feature] <= *threshold {
                    left.leaf_for(z)
                } else {
                    right.leaf_for(z)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBody {
    Ridge(LinearModel),
    Tree(TreeNode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub feature_order: Vec<String>,
    pub standardizer: Standardizer,
    pub body: ModelBody,
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        match &self.body {
            ModelBody::Ridge(m) => m.predict(&z),
            ModelBody::Tree(t) => t.leaf_for(&z).predict(&z),
        }
    }

    /// Ridge weights expressed on the unstandardized inputs.
    pub fn raw_linear(&self) -> Option<LinearModel> {
        let ModelBody::Ridge(m) = &self.body else {
            return None;
        };
        let s = &self.standardizer;
        let weights: Vec<f64> = m.weights.iter().zip(&s.scale).map(|(w, sc)| w / sc).collect();
        let intercept = m.intercept - weights.iter().zip(&s.mean).map(|(w, mu)| w * mu).sum::<f64>();
        Some(LinearModel { weights, intercept })
    }
}

fn check_instances(instances: &[TrainingInstance], feature_order: &[String]) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::InvalidParameter("no training instances".into()));
    }
    if let Some(bad) = instances.iter().find(|i| i.features.len() != feature_order.len()) {
        return Err(Error::InvalidParameter(format!(
            "instance has {} features, expected {}",
            bad.features.len(),
            feature_order.len()
        )));
    }
    Ok(())
}

fn standardized(instances: &[TrainingInstance], p: usize) -> (Standardizer, Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<&[f64]> = instances.iter().map(|i| i.features.as_slice()).collect();
    let st = Standardizer::fit(&rows, p);
    let z = rows.iter().map(|r| st.apply(r)).collect();
    let y = instances.iter().map(|i| i.label).collect();
    (st, z, y)
}

/// `argmin |Xw + b - y|^2 + lambda |w|^2` with unpenalized intercept, using
/// the SVD of the centered design so collinear columns stay well-behaved.
fn ridge_solve(z: &[&[f64]], y: &[f64], p: usize, lambda: f64) -> LinearModel {
    let n = z.len();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let col_mean: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    if p == 0 {
        return LinearModel {
            weights: vec![],
            intercept: y_mean,
        };
    }
    let x = DMatrix::from_fn(n, p, |i, j| z[i][j] - col_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let svd = x.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let uty = u.transpose() * yc;
    let mut coef = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let denom = s * s + lambda;
        coef[k] = if denom > 0.0 { s / denom * uty[k] } else { 0.0 };
    }
    let w = v_t.transpose() * coef;
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&col_mean).map(|(a, b)| a * b).sum::<f64>();
    LinearModel { weights, intercept }
}

pub fn fit_ridge(instances: &[TrainingInstance], feature_order: &[String], lambda: f64) -> Result<RegressionModel> {
    check_instances(instances, feature_order)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = feature_order.len();
    let (standardizer, z, y) = standardized(instances, p);
    let rows: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    Ok(RegressionModel {
        kind: ModelKind::Ridge,
        feature_order: feature_order.to_vec(),
        standardizer,
        body: ModelBody::Ridge(ridge_solve(&rows, &y, p, lambda)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_leaf: usize,
    pub sd_threshold: f64,
    pub max_depth: Option<usize>,
    /// Ridge penalty of the leaf models.
    pub lambda: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_leaf: 8,
            sd_threshold: 0.05,
            max_depth: None,
            lambda: 1e-8,
        }
    }
}

fn sd_of(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq / n - (sum / n) * (sum / n)).max(0.0).sqrt()
}

struct Grower<'a> {
    z: &'a [Vec<f64>],
    y: &'a [f64],
    p: usize,
    params: TreeParams,
    root_sd: f64,
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.z[i].as_slice()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        TreeNode::Leaf {
            n: idx.len(),
            model: ridge_solve(&rows, &y, self.p, self.params.lambda),
        }
    }

    /// Best `(feature, threshold, sdr)` over all binary threshold splits that
    /// leave at least `min_leaf` rows on each side.
    fn best_split(&self, idx: &[usize], sd: f64) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let nf = n as f64;
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for j in 0..self.p {
            order.sort_by(|&a, &b| self.z[a][j].total_cmp(&self.z[b][j]).then(a.cmp(&b)));
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut s2) = (0.0, 0.0);
            for k in 1..n {
                let yi = self.y[order[k - 1]];
                s += yi;
                s2 += yi * yi;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.z[order[k - 1]][j], self.z[order[k]][j]);
                if lo == hi {
                    continue;
                }
                let kf = k as f64;
                let sdr = sd - kf / nf * sd_of(s, s2, kf) - (nf - kf) / nf * sd_of(total - s, total_sq - s2, nf - kf);
                if best.is_none_or(|(_, _, b)| sdr > b) {
                    best = Some((j, lo + (hi - lo) / 2.0, sdr));
                }
            }
        }
        best.filter(|&(_, _, sdr)| sdr > 0.0)
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let nf = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let sum_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let sd = sd_of(sum, sum_sq, nf);
        let stop = idx.len() < 2 * self.params.min_leaf
            || sd < self.params.sd_threshold * self.root_sd
            || sd == 0.0
            || self.params.max_depth.is_some_and(|d| depth >= d);
        if stop {
            return self.leaf(&idx);
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, sd) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.z[i][feature] <= threshold);
        TreeNode::Split {
            n: idx.len(),
            feature,
            threshold,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }
}

pub fn fit_model_tree(instances: &[TrainingInstance], feature_order: &[String], params: &TreeParams) -> Result<RegressionModel> {
    check_instances(instances, feature_order)?;
    if !(params.sd_threshold >= 0.0) || !(params.lambda >= 0.0) {
        return Err(Error::InvalidParameter("tree thresholds must be >= 0".into()));
    }
    let p = feature_order.len();
    let (standardizer, z, y) = standardized(instances, p);
    let nf = y.len() as f64;
    let root_sd = sd_of(y.iter().sum(), y.iter().map(|v| v * v).sum(), nf);
    let grower = Grower {
        z: &z,
        y: &y,
        p,
        params: *params,
        root_sd,
    };
    let tree = grower.grow((0..y.len()).collect(), 0);
    Ok(RegressionModel {
        kind: ModelKind::ModelTree,
        feature_order: feature_order.to_vec(),
        standardizer,
        body: ModelBody::Tree(tree),
    })
}

/// Ranks `rows` (one feature vector per event) by predicted score, highest
/// first, ties by ascending event index.
pub fn predict_and_rank(
    model: &RegressionModel,
    feature_order: &[String],
    user: UserIdx,
    rows: &[(EventIdx, Vec<f64>)],
) -> Result<PredictionList> {
    if model.feature_order != feature_order {
        return Err(Error::FeatureOrderMismatch {
            expected: model.feature_order.clone(),
            actual: feature_order.to_vec(),
        });
    }
    let mut scored: Vec<(EventIdx, f64)> = rows.iter().map(|(e, x)| (*e, model.predict(x))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PredictionList::new(user, scored.into_iter().map(|(e, _)| e).collect()))
}
