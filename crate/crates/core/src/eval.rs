//! Temporal cross-validation, top-k% ranking metrics, expert-heuristic
//! baselines and reliability curves.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, jan1, Coverage, FeatureError, FeatureMatrix, FeatureSpec, Vocabularies, Window};
use crate::gbdt::{self, Dataset, GbdtError, GbdtModel, RegressionTree, TrainConfig, TreeParams};
use crate::ids::BlockId;
use crate::ingest::BlockTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unknown ranking strategy `{0}`")]
    UnknownStrategy(String),
    #[error("data range {first}-{last} spans {span} years; need at least {min} (lookback {lookback} + 2 x horizon {horizon})")]
    RangeTooShort {
        first: i32,
        last: i32,
        span: i32,
        min: i32,
        lookback: u32,
        horizon: u32,
    },
    #[error("no training reference year available before {0}")]
    NoTrainingYears(i32),
    #[error("feature column `{0}` required by this strategy is missing")]
    MissingColumn(&'static str),
    #[error("single_tree baseline needs training data")]
    NoTrainingData,
    #[error("k = {k} exceeds ranked list length {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("block {0} has no label")]
    MissingLabel(BlockId),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
}

/// `floor(n * percent / 100)`, at least 1.
pub fn top_k_count(n_blocks: usize, percent: f64) -> usize {
    ((n_blocks as f64 * percent / 100.0).floor() as usize).max(1)
}

/// Blocks in descending score order; equal scores by ascending block id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(BlockId, f64)>,
}

impl RankedList {
    pub fn from_scores(ids: &[BlockId], scores: &[f64]) -> Self {
        assert_eq!(ids.len(), scores.len());
        let mut entries: Vec<(BlockId, f64)> = ids.iter().copied().zip(scores.iter().copied()).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub hits: usize,
    pub positives: usize,
    /// No positives in the label set; recall is reported as 0.
    pub degenerate: bool,
}

pub fn precision_recall_at_k(
    ranked: &RankedList,
    labels: &BTreeMap<BlockId, u8>,
    k: usize,
) -> Result<PrecisionRecall, EvalError> {
    if k > ranked.len() {
        return Err(EvalError::KTooLarge { k, n: ranked.len() });
    }
    let mut hits = 0;
    let mut positives = 0;
    for (i, id) in ranked.ids().enumerate() {
        let l = *labels.get(&id).ok_or(EvalError::MissingLabel(id))?;
        positives += usize::from(l == 1);
        if i < k {
            hits += usize::from(l == 1);
        }
    }
    Ok(PrecisionRecall {
        precision: if k == 0 { 0.0 } else { hits as f64 / k as f64 },
        recall: if positives == 0 { 0.0 } else { hits as f64 / positives as f64 },
        hits,
        positives,
        degenerate: positives == 0,
    })
}

/// `(k, precision, recall)` for every k from 1 to the list length.
pub fn pr_curve(ranked: &RankedList, labels: &BTreeMap<BlockId, u8>) -> Result<Vec<(usize, f64, f64)>, EvalError> {
    let flags: Vec<u8> = ranked
        .ids()
        .map(|id| labels.get(&id).copied().ok_or(EvalError::MissingLabel(id)))
        .collect::<Result<_, _>>()?;
    let positives = flags.iter().filter(|&&l| l == 1).count();
    let mut hits = 0;
    Ok(flags
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            hits += usize::from(l == 1);
            let k = i + 1;
            let recall = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
            (k, hits as f64 / k as f64, recall)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Gbdt,
    SingleTree,
    PastBreaks,
    PipeAge,
    Random,
}

impl Strategy {
    pub const BASELINES: [Strategy; 4] = [Strategy::Random, Strategy::PipeAge, Strategy::PastBreaks, Strategy::SingleTree];
    pub const ALL: [Strategy; 5] = [
        Strategy::Gbdt,
        Strategy::SingleTree,
        Strategy::PastBreaks,
        Strategy::PipeAge,
        Strategy::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Gbdt => "gbdt",
            Strategy::SingleTree => "single_tree",
            Strategy::PastBreaks => "past_breaks",
            Strategy::PipeAge => "pipe_age",
            Strategy::Random => "random",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Strategy::Gbdt => "Model (GBDT)",
            Strategy::SingleTree => "Decision Tree",
            Strategy::PastBreaks => "Rank by Past Breaks (baseline)",
            Strategy::PipeAge => "Rank by Pipe Age (baseline)",
            Strategy::Random => "Random (baseline)",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| EvalError::UnknownStrategy(s.to_string()))
    }
}

/// Rank the matrix rows by a heuristic or single-tree baseline.
///
/// `training` is only read by `single_tree`; `tree_params` sets its shape.
pub fn baseline_rank(
    strategy: Strategy,
    matrix: &FeatureMatrix,
    seed: u64,
    training: Option<&Dataset>,
    tree_params: TreeParams,
) -> Result<RankedList, EvalError> {
    let ids = &matrix.block_ids;
    let scores = match strategy {
        Strategy::Random => {
            let mut order = ids.clone();
            order.sort();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = order.len() as f64;
            let entries = order.into_iter().enumerate().map(|(i, id)| (id, (n - i as f64) / n)).collect();
            return Ok(RankedList { entries });
        }
        Strategy::PipeAge => matrix.column(features::PIPE_AGE).ok_or(EvalError::MissingColumn(features::PIPE_AGE))?,
        Strategy::PastBreaks => {
            let col = Window::All.column_name();
            matrix.column(&col).ok_or(EvalError::MissingColumn("breaks_all"))?
        }
        Strategy::SingleTree => {
            let data = training.ok_or(EvalError::NoTrainingData)?;
            if data.feature_names != matrix.columns {
                return Err(GbdtError::ColumnMismatch.into());
            }
            let tree = RegressionTree::fit(data, &data.targets, tree_params);
            (0..matrix.n_rows()).map(|i| tree.predict(matrix.row(i))).collect()
        }
        Strategy::Gbdt => return Err(EvalError::UnknownStrategy("gbdt is not a baseline".into())),
    };
    Ok(RankedList::from_scores(ids, &scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSplit {
    pub test_year: i32,
    pub train_years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub first_year: i32,
    pub last_year: i32,
    pub horizon_years: u32,
    pub lookback_years: u32,
    pub splits: Vec<PlannedSplit>,
}

impl SplitPlan {
    /// Data coverage `[first_year-01-01, (last_year + 1)-01-01)`.
    pub fn coverage(&self) -> Coverage {
        Coverage::years(self.first_year, self.last_year)
    }
}

/// Every test year `T` with `[T, T + horizon)` inside `first_year..=last_year`
/// and at least one training year `T'` with `T' + horizon <= T` and
/// `T' - lookback >= first_year`.
pub fn make_split_plan(first_year: i32, last_year: i32, horizon: u32, lookback: u32) -> Result<SplitPlan, EvalError> {
    let span = last_year - first_year + 1;
    let min = lookback as i32 + 2 * horizon as i32;
    if span < min {
        return Err(EvalError::RangeTooShort { first: first_year, last: last_year, span, min, lookback, horizon });
    }
    let h = horizon as i32;
    let earliest_train = first_year + lookback as i32;
    let splits = (earliest_train + h..=last_year + 1 - h)
        .map(|t| PlannedSplit { test_year: t, train_years: (earliest_train..=t - h).collect() })
        .collect();
    Ok(SplitPlan { first_year, last_year, horizon_years: horizon, lookback_years: lookback, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub positives: usize,
    pub mean_predicted: Option<f64>,
    pub mean_empirical: Option<f64>,
}

/// Equal-width bins over `[0, 1]`; the last bin is closed.
pub fn reliability_curve(predictions: &[f64], labels: &[u8], bins: usize) -> Vec<ReliabilityBin> {
    assert_eq!(predictions.len(), labels.len());
    let bins = bins.max(2);
    let mut sums = vec![(0usize, 0usize, 0.0f64); bins];
    for (&p, &l) in predictions.iter().zip(labels) {
        let idx = ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        let s = &mut sums[idx];
        s.0 += 1;
        s.1 += usize::from(l == 1);
        s.2 += p;
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (count, positives, psum))| ReliabilityBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
            positives,
            mean_predicted: (count > 0).then(|| psum / count as f64),
            mean_empirical: (count > 0).then(|| positives as f64 / count as f64),
        })
        .collect()
}

/// Count-weighted mean of `|predicted - empirical|` over non-empty bins.
pub fn weighted_calibration_gap(bins: &[ReliabilityBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter_map(|b| Some(b.count as f64 * (b.mean_predicted? - b.mean_empirical?).abs()))
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: FeatureSpec,
    pub train: TrainConfig,
    pub single_tree_depth: usize,
    pub percent: f64,
    pub bins: usize,
    /// Seed for the random baseline; mixed with the test year.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            features: FeatureSpec::default(),
            train: TrainConfig::default(),
            single_tree_depth: 3,
            percent: 1.0,
            bins: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub precision: f64,
    pub recall: f64,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub test_year: i32,
    pub train_years: Vec<i32>,
    pub n_train_rows: usize,
    pub n_blocks: usize,
    pub k: usize,
    pub positives: usize,
    pub degenerate: bool,
    pub results: Vec<StrategyResult>,
}

impl SplitResult {
    pub fn precision(&self, s: Strategy) -> Option<f64> {
        self.results.iter().find(|r| r.strategy == s).map(|r| r.precision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub plan: SplitPlan,
    pub splits: Vec<SplitResult>,
    /// Unweighted mean over splits.
    pub aggregate: Vec<StrategySummary>,
    pub final_test_year: i32,
    /// Gini importances of the final split's model, descending.
    pub feature_importances: Vec<Importance>,
    /// GBDT test predictions pooled over all splits.
    pub reliability: Vec<ReliabilityBin>,
}

impl ExperimentReport {
    pub fn mean_precision(&self, s: Strategy) -> Option<f64> {
        self.aggregate.iter().find(|a| a.strategy == s).map(|a| a.mean_precision)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Outputs of the final split used for ranking exports.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalSplit {
    pub test_year: i32,
    pub ranking: RankedList,
    pub labels: BTreeMap<BlockId, u8>,
    pub model: GbdtModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub final_split: FinalSplit,
}

struct SplitOutcome {
    result: SplitResult,
    predictions: Vec<f64>,
    labels: Vec<u8>,
    ranking: RankedList,
    label_map: BTreeMap<BlockId, u8>,
    model: GbdtModel,
}

/// Train and score every split of `plan`, then aggregate.
pub fn run_experiment(table: &BlockTable, config: &ExperimentConfig, plan: &SplitPlan) -> Result<ExperimentRun, EvalError> {
    let mut config = config.clone();
    if config.features.vocab == Vocabularies::default() {
        config.features.vocab = Vocabularies::from_table(table);
    }
    config.features.validate()?;
    config.train.validate()?;
    let coverage = plan.coverage();
    let horizon = plan.horizon_years;
    if plan.splits.is_empty() {
        return Err(EvalError::NoTrainingYears(plan.last_year));
    }

    let mut years: Vec<i32> = plan
        .splits
        .iter()
        .flat_map(|s| s.train_years.iter().copied().chain([s.test_year]))
        .collect();
    years.sort_unstable();
    years.dedup();
    let matrices: BTreeMap<i32, FeatureMatrix> = years
        .par_iter()
        .map(|&y| features::labeled_matrix(table, &config.features, jan1(y), horizon, &coverage).map(|m| (y, m)))
        .collect::<Result<_, _>>()?;

    let outcomes: Vec<SplitOutcome> = plan
        .splits
        .par_iter()
        .map(|s| run_split(s, &matrices, &config))
        .collect::<Result<_, _>>()?;

    let aggregate = Strategy::ALL
        .iter()
        .map(|&strategy| {
            let pick = |f: fn(&StrategyResult) -> f64| {
                outcomes
                    .iter()
                    .map(|o| o.result.results.iter().find(|r| r.strategy == strategy).map_or(0.0, f))
                    .sum::<f64>()
                    / outcomes.len() as f64
            };
            StrategySummary { strategy, mean_precision: pick(|r| r.precision), mean_recall: pick(|r| r.recall) }
        })
        .collect();

    let pooled_preds: Vec<f64> = outcomes.iter().flat_map(|o| o.predictions.iter().copied()).collect();
    let pooled_labels: Vec<u8> = outcomes.iter().flat_map(|o| o.labels.iter().copied()).collect();
    let reliability = reliability_curve(&pooled_preds, &pooled_labels, config.bins);

    let last = outcomes.last().expect("at least one split");
    let mut feature_importances: Vec<Importance> = match gbdt::gini_importance(&last.model) {
        Ok(v) => v.into_iter().map(|(feature, weight)| Importance { feature, weight }).collect(),
        Err(GbdtError::NoSplits) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    feature_importances.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.feature.cmp(&b.feature)));

    let final_split = FinalSplit {
        test_year: last.result.test_year,
        ranking: last.ranking.clone(),
        labels: last.label_map.clone(),
        model: last.model.clone(),
    };
    let report = ExperimentReport {
        config,
        plan: plan.clone(),
        final_test_year: final_split.test_year,
        splits: outcomes.into_iter().map(|o| o.result).collect(),
        aggregate,
        feature_importances,
        reliability,
    };
    Ok(ExperimentRun { report, final_split })
}

fn run_split(
    split: &PlannedSplit,
    matrices: &BTreeMap<i32, FeatureMatrix>,
    config: &ExperimentConfig,
) -> Result<SplitOutcome, EvalError> {
    let train_ms: Vec<&FeatureMatrix> = split.train_years.iter().map(|y| &matrices[y]).collect();
    if train_ms.is_empty() {
        return Err(EvalError::NoTrainingYears(split.test_year));
    }
    let data = Dataset::from_matrices(&train_ms)?;
    let test = &matrices[&split.test_year];
    let labels = test.labels.clone().expect("labeled test matrix");
    let label_map: BTreeMap<BlockId, u8> = test.block_ids.iter().copied().zip(labels.iter().copied()).collect();

    let model = gbdt::train(&data, &config.train)?;
    let predictions = model.predict_matrix(test)?;
    let ranking = RankedList::from_scores(&test.block_ids, &predictions);

    let tree_params = TreeParams { max_depth: config.single_tree_depth, min_samples_leaf: config.train.min_samples_leaf };
    let k = top_k_count(test.n_rows(), config.percent);
    let mut results = Vec::new();
    let mut positives = 0;
    let mut degenerate = false;
    for strategy in Strategy::ALL {
        let ranked = match strategy {
            Strategy::Gbdt => ranking.clone(),
            s => baseline_rank(s, test, random_seed(config.seed, split.test_year), Some(&data), tree_params)?,
        };
        let pr = precision_recall_at_k(&ranked, &label_map, k)?;
        positives = pr.positives;
        degenerate = pr.degenerate;
        results.push(StrategyResult { strategy, precision: pr.precision, recall: pr.recall, hits: pr.hits });
    }

    Ok(SplitOutcome {
        result: SplitResult {
            test_year: split.test_year,
            train_years: split.train_years.clone(),
            n_train_rows: data.n_rows(),
            n_blocks: test.n_rows(),
            k,
            positives,
            degenerate,
            results,
        },
        predictions,
        labels,
        ranking,
        label_map,
        model,
    })
}

fn random_seed(seed: u64, year: i32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ year as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u64]) -> Vec<BlockId> {
        v.iter().map(|&i| BlockId(i)).collect()
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_count(5263, 1.0), 52);
        assert_eq!(top_k_count(100, 1.0), 1);
        assert_eq!(top_k_count(50, 1.0), 1);
        assert_eq!(top_k_count(500, 1.0), 5);
    }

    #[test]
    fn ranked_list_tie_break() {
        let r = RankedList::from_scores(&ids(&[9, 4, 1]), &[5.0, 5.0, 2.0]);
        assert_eq!(r.ids().collect::<Vec<_>>(), ids(&[4, 9, 1]));
    }

    #[test]
    fn headline_top_k_counts() {
        // 52 ranked blocks, 32 of them positive, 457 positives overall
        let n = 5263;
        let block_ids = ids(&(0..n).collect::<Vec<_>>());
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let ranked = RankedList::from_scores(&block_ids, &scores);
        let mut labels = BTreeMap::new();
        for i in 0..n {
            let pos = (i < 52 && i % 52 < 32) || (52..52 + 425).contains(&i);
            labels.insert(BlockId(i), u8::from(pos));
        }
        let pr = precision_recall_at_k(&ranked, &labels, top_k_count(n as usize, 1.0)).unwrap();
        assert_eq!(pr.hits, 32);
        assert_eq!(pr.positives, 457);
        assert!((pr.precision - 0.615).abs() < 5e-4);
        assert!((pr.recall - 0.070).abs() < 5e-4);
    }

    #[test]
    fn all_negative_top_k() {
        let r = RankedList::from_scores(&ids(&[1, 2, 3]), &[3.0, 2.0, 1.0]);
        let labels: BTreeMap<_, _> = [(BlockId(1), 0), (BlockId(2), 0), (BlockId(3), 1)].into_iter().collect();
        let pr = precision_recall_at_k(&r, &labels, 2).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.0, 0.0));
        assert!(!pr.degenerate);
    }

    #[test]
    fn zero_positives_flagged() {
        let r = RankedList::from_scores(&ids(&[1, 2]), &[1.0, 0.0]);
        let labels: BTreeMap<_, _> = [(BlockId(1), 0), (BlockId(2), 0)].into_iter().collect();
        let pr = precision_recall_at_k(&r, &labels, 1).unwrap();
        assert!(pr.degenerate);
        assert_eq!(pr.recall, 0.0);
        assert!(precision_recall_at_k(&r, &labels, 3).is_err());
    }

    #[test]
    fn split_plan_examples() {
        let p = make_split_plan(2005, 2015, 3, 3).unwrap();
        let s2013 = p.splits.iter().find(|s| s.test_year == 2013).unwrap();
        assert_eq!(s2013.train_years, vec![2008, 2009, 2010]);
        assert_eq!(p.splits.first().unwrap().test_year, 2011);
        // events through 2015-12-31 make 2013 the last full window
        assert_eq!(p.splits.last().unwrap().test_year, 2013);
        // if 2015 is incomplete the range ends in 2014 and the last test year is 2012
        let p = make_split_plan(2005, 2014, 3, 3).unwrap();
        assert_eq!(p.splits.last().unwrap().test_year, 2012);

        let err = make_split_plan(2005, 2008, 3, 6).unwrap_err();
        assert!(err.to_string().contains("at least 12"), "{err}");
    }

    #[test]
    fn split_plan_training_never_overlaps_test_window() {
        for lookback in 0..5 {
            for horizon in 1..4 {
                let Ok(p) = make_split_plan(2000, 2020, horizon, lookback) else { continue };
                for s in &p.splits {
                    assert!(!s.train_years.is_empty());
                    for t in &s.train_years {
                        assert!(t + horizon as i32 <= s.test_year);
                        assert!(t - lookback as i32 >= 2000);
                    }
                    assert!(s.test_year + horizon as i32 <= 2021);
                }
            }
        }
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("pipe_age".parse::<Strategy>().unwrap(), Strategy::PipeAge);
        assert_eq!("oracle".parse::<Strategy>(), Err(EvalError::UnknownStrategy("oracle".into())));
    }

    #[test]
    fn reliability_all_zero() {
        let bins = reliability_curve(&[0.0; 7], &[0; 7], 10);
        assert_eq!(bins.len(), 10);
        assert_eq!(bins[0].count, 7);
        assert_eq!(bins[0].mean_predicted, Some(0.0));
        assert_eq!(bins[0].mean_empirical, Some(0.0));
        assert!(bins[1..].iter().all(|b| b.count == 0 && b.mean_predicted.is_none()));
    }

    #[test]
    fn reliability_last_bin_closed() {
        let bins = reliability_curve(&[1.0, 0.95, 0.1], &[1, 0, 0], 10);
        assert_eq!(bins[9].count, 2);
        assert_eq!(bins[1].count, 1);
    }

    #[test]
    fn pr_curve_endpoints() {
        let r = RankedList::from_scores(&ids(&[1, 2, 3, 4]), &[4.0, 3.0, 2.0, 1.0]);
        let labels: BTreeMap<_, _> = [(BlockId(1), 1), (BlockId(2), 0), (BlockId(3), 1), (BlockId(4), 0)].into_iter().collect();
        let c = pr_curve(&r, &labels).unwrap();
        assert_eq!(c[0], (1, 1.0, 0.5));
        assert_eq!(c[3], (4, 0.5, 1.0));
    }
}
