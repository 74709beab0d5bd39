//! Stochastic gradient-boosted regression trees on squared loss.
//!
//! The model is `F(x) = base + sum_j lr * h_j(x)` where `base` is the mean
//! training label and each `h_j` is a CART regression tree fitted to the
//! residuals `y - F_{j-1}(x)` on a fresh row subsample drawn without
//! replacement. Leaves hold the mean residual of the rows that reach them.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbdtError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(f64),
    #[error("matrix has no labels")]
    Unlabeled,
    #[error("missing feature column `{0}`")]
    MissingColumn(String),
    #[error("model has no splits")]
    NoSplits,
    #[error("matrices disagree on column names")]
    ColumnMismatch,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub max_depth: usize,
    pub subsample: f64,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            max_depth: 3,
            subsample: 0.5,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidConfig(m.to_string()));
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Row-major training data with real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, values: Vec<f64>, targets: Vec<f64>) -> Self {
        assert_eq!(values.len(), feature_names.len() * targets.len(), "values must be rows x features");
        Self { feature_names, values, targets }
    }

    /// Pool labeled matrices that share one column layout.
    pub fn from_matrices(ms: &[&FeatureMatrix]) -> Result<Self, GbdtError> {
        let first = ms.first().ok_or(GbdtError::TooFewRows(0))?;
        let mut values = Vec::new();
        let mut targets = Vec::new();
        for m in ms {
            if m.columns != first.columns {
                return Err(GbdtError::ColumnMismatch);
            }
            let labels = m.labels.as_ref().ok_or(GbdtError::Unlabeled)?;
            values.extend_from_slice(&m.values);
            targets.extend(labels.iter().map(|&l| f64::from(l)));
        }
        Ok(Self::new(first.columns.clone(), values, targets))
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_features();
        &self.values[i * n..(i + 1) * n]
    }

    #[inline]
    fn at(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    /// Sum-of-squares reduction `SS(parent) - SS(left) - SS(right)`.
    pub gain: f64,
}

/// Best threshold on one column by sum-of-squares reduction.
///
/// Candidates are midpoints between adjacent distinct sorted values that leave
/// at least `min_samples_leaf` rows on each side. Equal gains keep the smaller
/// threshold.
pub fn best_split(values: &[f64], targets: &[f64], min_samples_leaf: usize) -> Option<SplitCandidate> {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(targets.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    best_split_sorted(&pairs, min_samples_leaf)
}

fn best_split_sorted(pairs: &[(f64, f64)], min_samples_leaf: usize) -> Option<SplitCandidate> {
    let n = pairs.len();
    let msl = min_samples_leaf.max(1);
    if n < 2 * msl {
        return None;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let parent = total * total / n as f64;
    let mut best: Option<SplitCandidate> = None;
    let mut left_sum = 0.0;
    for i in 0..n - 1 {
        left_sum += pairs[i].1;
        let n_left = i + 1;
        if n_left < msl {
            continue;
        }
        if n - n_left < msl {
            break;
        }
        if pairs[i].0 == pairs[i + 1].0 {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - parent;
        if best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate { threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0), gain });
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        gain: f64,
        n_samples: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl RegressionTree {
    /// Fit on every row of `data` against `targets`.
    pub fn fit(data: &Dataset, targets: &[f64], params: TreeParams) -> Self {
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        fit_tree(data, targets, &rows, params)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Depth of the deepest leaf; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    /// `(feature, gain)` for every split node.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        fn go(n: &Node, out: &mut Vec<(usize, f64)>) {
            if let Node::Split { feature, gain, left, right, .. } = n {
                out.push((*feature, *gain));
                go(left, out);
                go(right, out);
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }
}

/// Greedy depth-first CART growth on the given rows.
pub fn fit_tree(data: &Dataset, targets: &[f64], rows: &[usize], params: TreeParams) -> RegressionTree {
    let mut rows = rows.to_vec();
    RegressionTree { root: grow(data, targets, &mut rows, 0, params) }
}

fn leaf(targets: &[f64], rows: &[usize]) -> Node {
    let value = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64
    };
    Node::Leaf { value, n_samples: rows.len() }
}

fn grow(data: &Dataset, targets: &[f64], rows: &mut [usize], depth: usize, params: TreeParams) -> Node {
    if depth >= params.max_depth || rows.len() < 2 * params.min_samples_leaf.max(1) {
        return leaf(targets, rows);
    }
    let Some((feature, split)) = choose_split(data, targets, rows, params.min_samples_leaf) else {
        return leaf(targets, rows);
    };
    let sum_sq: f64 = rows.iter().map(|&r| targets[r] * targets[r]).sum();
    if !(split.gain > 1e-12 * sum_sq.max(f64::MIN_POSITIVE)) {
        return leaf(targets, rows);
    }

    // stable partition keeps child row order canonical
    let (mut left, mut right): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| data.at(r, feature) <= split.threshold);
    Node::Split {
        feature,
        threshold: split.threshold,
        gain: split.gain,
        n_samples: rows.len(),
        left: Box::new(grow(data, targets, &mut left, depth + 1, params)),
        right: Box::new(grow(data, targets, &mut right, depth + 1, params)),
    }
}

/// Best split over all features. Ties: smaller threshold, then lower index.
fn choose_split(
    data: &Dataset,
    targets: &[f64],
    rows: &[usize],
    min_samples_leaf: usize,
) -> Option<(usize, SplitCandidate)> {
    let mut best: Option<(usize, SplitCandidate)> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for f in 0..data.n_features() {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data.at(r, f), targets[r])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let Some(c) = best_split_sorted(&pairs, min_samples_leaf) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, b)) => c.gain > b.gain || (c.gain == b.gain && c.threshold < b.threshold),
        };
        if better {
            best = Some((f, c));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    pub weight: f64,
    pub tree: RegressionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub trees: Vec<WeightedTree>,
    /// Full-sample `sum (y - F_j)^2`; entry 0 is the base score alone, entry
    /// `j` follows the `j`-th tree.
    pub loss_history: Vec<f64>,
}

fn squared_loss(targets: &[f64], scores: &[f64]) -> f64 {
    targets.iter().zip(scores).map(|(y, f)| (y - f) * (y - f)).sum()
}

/// Fit a boosted ensemble on 0/1 labels.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<GbdtModel, GbdtError> {
    config.validate()?;
    let n = data.n_rows();
    if n < 2 {
        return Err(GbdtError::TooFewRows(n));
    }
    if let Some(&bad) = data.targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(GbdtError::NonBinaryLabel(bad));
    }

    let base_score = data.targets.iter().sum::<f64>() / n as f64;
    let mut scores = vec![base_score; n];
    let mut model = GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        feature_names: data.feature_names.clone(),
        base_score,
        trees: Vec::with_capacity(config.iterations),
        loss_history: vec![squared_loss(&data.targets, &scores)],
    };
    if data.targets.iter().all(|&y| y == data.targets[0]) {
        log::warn!("all {n} training labels equal {}; model is the constant base score", data.targets[0]);
        return Ok(model);
    }

    let params = TreeParams { max_depth: config.max_depth, min_samples_leaf: config.min_samples_leaf };
    let n_sub = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut residuals = vec![0.0; n];

    for _ in 0..config.iterations {
        for i in 0..n {
            residuals[i] = data.targets[i] - scores[i];
        }
        let rows = if n_sub == n {
            all_rows.clone()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, n, n_sub).into_vec();
            idx.sort_unstable();
            idx
        };
        let tree = fit_tree(data, &residuals, &rows, params);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += config.learning_rate * tree.predict(data.row(i));
        }
        model.loss_history.push(squared_loss(&data.targets, &scores));
        model.trees.push(WeightedTree { weight: config.learning_rate, tree });
    }
    Ok(model)
}

impl GbdtModel {
    /// Unclamped additive score for a row in model column order.
    pub fn predict_raw(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.weight * t.tree.predict(row))
    }

    /// Risk score clamped to `[0, 1]`.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_raw(row).clamp(0.0, 1.0)
    }

    /// Score a row given by column name.
    pub fn predict_named(&self, columns: &[String], row: &[f64]) -> Result<f64, GbdtError> {
        let map = self.column_map(columns)?;
        let aligned: Vec<f64> = map.iter().map(|&j| row[j]).collect();
        Ok(self.predict(&aligned))
    }

    /// Score every row of a matrix, matching columns by name.
    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        let map = self.column_map(&m.columns)?;
        let mut aligned = vec![0.0; map.len()];
        Ok((0..m.n_rows())
            .map(|i| {
                let row = m.row(i);
                for (a, &j) in aligned.iter_mut().zip(&map) {
                    *a = row[j];
                }
                self.predict(&aligned)
            })
            .collect())
    }

    fn column_map(&self, columns: &[String]) -> Result<Vec<usize>, GbdtError> {
        let index: BTreeMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        self.feature_names
            .iter()
            .map(|f| index.get(f.as_str()).copied().ok_or_else(|| GbdtError::MissingColumn(f.clone())))
            .collect()
    }

    pub fn n_splits(&self) -> usize {
        self.trees.iter().map(|t| t.tree.splits().len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GbdtError> {
        let m: GbdtModel = serde_json::from_str(s).map_err(|e| GbdtError::Json(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(GbdtError::Version(m.format_version));
        }
        Ok(m)
    }
}

/// Normalized per-feature sum of split gains across every tree.
pub fn gini_importance(model: &GbdtModel) -> Result<Vec<(String, f64)>, GbdtError> {
    let mut totals = vec![0.0; model.feature_names.len()];
    let mut any = false;
    for t in &model.trees {
        for (f, gain) in t.tree.splits() {
            totals[f] += gain;
            any = true;
        }
    }
    let sum: f64 = totals.iter().sum();
    if !any || !(sum > 0.0) {
        return Err(GbdtError::NoSplits);
    }
    Ok(model
        .feature_names
        .iter()
        .cloned()
        .zip(totals.into_iter().map(|g| g / sum))
        .collect())
}
