//! Random-forest degradation regressor and its validation tooling.
//!
//! Trees are grown on bootstrap resamples using variance reduction over a
//! random feature subset at each node. Every tree derives its own RNG seed
//! from the forest seed and its index, so training in parallel yields the
//! same forest as training sequentially.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{pair_features, ApplicationProfile, ColocationSample, FeatureSet};

/// Current `model.json` schema version.
pub const MODEL_VERSION: u32 = 1;

/// Ridge term added to the normal equations of the linear baseline.
const RIDGE: f64 = 1e-8;

/// Number of features examined per split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxFeatures {
    /// Every feature (`auto`).
    All,
    /// `ceil(sqrt(d))` features.
    Sqrt,
    /// `max(1, floor(fraction * d))` features, fraction in (0, 1].
    Fraction(f64),
}

impl MaxFeatures {
    pub fn count(&self, n_features: usize) -> usize {
        let k = match *self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::Fraction(f) => ((f * n_features as f64).floor() as usize).max(1),
        };
        k.clamp(1, n_features.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxFeatures::All => f.write_str("auto"),
            MaxFeatures::Sqrt => f.write_str("sqrt"),
            MaxFeatures::Fraction(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for MaxFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" | "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            other => {
                let f: f64 = other.parse().map_err(|_| {
                    Error::InvalidParameter(format!("max_features `{other}`: expected auto, sqrt or a fraction"))
                })?;
                if f > 0.0 && f <= 1.0 {
                    Ok(MaxFeatures::Fraction(f))
                } else {
                    Err(Error::InvalidParameter(format!("max_features fraction {f} not in (0, 1]")))
                }
            }
        }
    }
}

impl Serialize for MaxFeatures {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyperparams {
    /// Best configuration found for the generic counters with mean values.
    fn default() -> Self {
        ForestHyperparams {
            n_estimators: 22,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidParameter("n_estimators must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParameter("min_samples_split must be >= 2".into()));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!("max_features fraction {f} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// A regression tree node. Serialized as `{f,t,l,r}` or `{v}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: Box<TreeNode>,
        #[serde(rename = "r")]
        right: Box<TreeNode>,
    },
    Leaf {
        #[serde(rename = "v")]
        value: f64,
    },
}

impl TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature_index(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => Some(
                (*feature)
                    .max(left.max_feature_index().unwrap_or(0))
                    .max(right.max_feature_index().unwrap_or(0)),
            ),
        }
    }
}

/// Anything that maps a feature row to a degradation estimate.
pub trait Regressor {
    fn predict_row(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationModel {
    pub feature_set: FeatureSet,
    pub hyperparams: ForestHyperparams,
    /// (min, max) of the training targets, percent.
    pub training_target_range: (f64, f64),
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

impl Regressor for DegradationModel {
    /// Mean leaf value over all trees, floored at zero.
    fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (sum / self.trees.len() as f64).max(0.0)
    }
}

impl DegradationModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::FeatureLength {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.predict_row(x))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// A copy of this model restricted to its first `n` trees.
    pub fn truncated(&self, n: usize) -> Result<DegradationModel> {
        if n == 0 || n > self.trees.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {n} of {} trees",
                self.trees.len()
            )));
        }
        let mut model = self.clone();
        model.trees.truncate(n);
        model.hyperparams.n_estimators = n;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocRef {
            version: MODEL_VERSION,
            feature_set: &self.feature_set,
            hyperparams: &self.hyperparams,
            training_target_range: [self.training_target_range.0, self.training_target_range.1],
            n_features: self.n_features,
            trees: &self.trees,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<DegradationModel> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let version = Version::deserialize(&mut de)
            .map_err(|e| Error::CorruptModel(e.to_string()))?
            .version;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let doc = ModelDoc::deserialize(&mut de).map_err(|e| Error::CorruptModel(e.to_string()))?;
        de.end().map_err(|e| Error::CorruptModel(e.to_string()))?;
        let model = DegradationModel {
            feature_set: doc.feature_set,
            hyperparams: doc.hyperparams,
            training_target_range: (doc.training_target_range[0], doc.training_target_range[1]),
            n_features: doc.n_features,
            trees: doc.trees,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        if self.trees.len() != self.hyperparams.n_estimators {
            return Err(Error::CorruptModel(format!(
                "{} trees recorded but n_estimators = {}",
                self.trees.len(),
                self.hyperparams.n_estimators
            )));
        }
        if self.n_features != self.feature_set.pair_len() {
            return Err(Error::CorruptModel(format!(
                "n_features {} does not match feature set {} ({})",
                self.n_features,
                self.feature_set,
                self.feature_set.pair_len()
            )));
        }
        if let Some(max) = self.trees.iter().filter_map(|t| t.max_feature_index()).max() {
            if max >= self.n_features {
                return Err(Error::CorruptModel(format!("split on feature {max} out of range")));
            }
        }
        let (lo, hi) = self.training_target_range;
        if !(lo <= hi) {
            return Err(Error::CorruptModel("training_target_range is inverted".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ModelDocRef<'a> {
    version: u32,
    feature_set: &'a FeatureSet,
    hyperparams: &'a ForestHyperparams,
    training_target_range: [f64; 2],
    n_features: usize,
    trees: &'a [TreeNode],
}

#[derive(Deserialize)]
struct ModelDoc {
    #[allow(dead_code)]
    version: u32,
    feature_set: FeatureSet,
    hyperparams: ForestHyperparams,
    training_target_range: [f64; 2],
    n_features: usize,
    trees: Vec<TreeNode>,
}

pub fn save_model(model: &DegradationModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DegradationModel> {
    let text = std::fs::read_to_string(path)?;
    DegradationModel::from_json(&text)
}

/// Decorrelates per-tree seeds (splitmix64 finaliser).
fn tree_seed(seed: u64, tree: usize) -> u64 {
    let mut z = seed ^ (tree as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    targets: &'a [f64],
    n_features: usize,
    max_features: usize,
    min_samples_split: usize,
    rng: ChaCha8Rng,
    feature_pool: Vec<usize>,
    scratch: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize]) -> TreeNode {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.targets[i]).sum::<f64>() / n as f64;
        let first = self.targets[idx[0]];
        if n < self.min_samples_split || idx.iter().all(|&i| self.targets[i] == first) {
            return TreeNode::Leaf { value: mean };
        }

        // Random subset first; fall back to the remaining features when the
        // subset is constant over this node.
        self.feature_pool.shuffle(&mut self.rng);
        let mut chosen = self.feature_pool[..self.max_features].to_vec();
        chosen.sort_unstable();
        let mut best = self.best_split(idx, &chosen);
        if best.is_none() && self.max_features < self.n_features {
            let mut rest = self.feature_pool[self.max_features..].to_vec();
            rest.sort_unstable();
            best = self.best_split(idx, &rest);
        }
        let Some(split) = best else {
            return TreeNode::Leaf { value: mean };
        };

        let mut boundary = 0;
        for k in 0..n {
            if self.rows[idx[k]][split.feature] <= split.threshold {
                idx.swap(k, boundary);
                boundary += 1;
            }
        }
        debug_assert!(boundary > 0 && boundary < n);
        let (left, right) = idx.split_at_mut(boundary);
        let left = self.build(left);
        let right = self.build(right);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Maximises `sum_l^2/n_l + sum_r^2/n_r`, i.e. the sum-of-squares decrease.
    /// Strict comparison keeps the lowest feature index, then the lowest threshold.
    fn best_split(&mut self, idx: &[usize], features: &[usize]) -> Option<SplitCandidate> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.targets[i]).sum();
        let mut best: Option<SplitCandidate> = None;
        for &feature in features {
            self.scratch.clear();
            self.scratch
                .extend(idx.iter().map(|&i| (self.rows[i][feature], self.targets[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.scratch[k].1;
                let lo = self.scratch[k].0;
                let hi = self.scratch[k + 1].0;
                if lo == hi {
                    continue;
                }
                let n_left = (k + 1) as f64;
                let n_right = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left + right_sum * right_sum / n_right;
                if best.is_none_or(|b| score > b.score) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi || threshold < lo {
                        threshold = lo;
                    }
                    best = Some(SplitCandidate {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

fn grow_tree(rows: &[&[f64]], targets: &[f64], hp: &ForestHyperparams, seed: u64) -> TreeNode {
    let n = rows.len();
    let n_features = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = if hp.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = TreeBuilder {
        rows,
        targets,
        n_features,
        max_features: hp.max_features.count(n_features),
        min_samples_split: hp.min_samples_split,
        rng,
        feature_pool: (0..n_features).collect(),
        scratch: Vec::with_capacity(n),
    };
    debug_assert!(builder.max_features <= builder.n_features);
    builder.build(&mut idx)
}

/// Grows a forest on raw rows; the building block behind [`train_forest`].
pub fn fit_forest(
    rows: &[&[f64]],
    targets: &[f64],
    feature_set: FeatureSet,
    hp: &ForestHyperparams,
) -> Result<DegradationModel> {
    hp.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch(targets.len(), rows.len()));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::FeatureLength {
            expected: d,
            got: bad.len(),
        });
    }
    if d == 0 {
        return Err(Error::InvalidParameter("feature vectors are empty".into()));
    }
    let trees: Vec<TreeNode> = (0..hp.n_estimators)
        .into_par_iter()
        .map(|t| grow_tree(rows, targets, hp, tree_seed(hp.seed, t)))
        .collect();
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DegradationModel {
        feature_set,
        hyperparams: *hp,
        training_target_range: (lo, hi),
        n_features: d,
        trees,
    })
}

pub fn train_forest(
    dataset: &[ColocationSample],
    feature_set: FeatureSet,
    hp: &ForestHyperparams,
) -> Result<DegradationModel> {
    let (rows, targets) = split_xy(dataset);
    if let Some(first) = rows.first() {
        if first.len() != feature_set.pair_len() {
            return Err(Error::FeatureLength {
                expected: feature_set.pair_len(),
                got: first.len(),
            });
        }
    }
    fit_forest(&rows, &targets, feature_set, hp)
}

/// Predicted slowdown of `primary` when colocated with `interfering`, percent.
pub fn predict_degradation(
    model: &DegradationModel,
    primary: &ApplicationProfile,
    interfering: &ApplicationProfile,
) -> Result<f64> {
    let x = pair_features(&model.feature_set, primary, interfering).map_err(|e| match e {
        Error::MissingCounter { app, counter } => Error::FeatureSetMismatch {
            model: model.feature_set.to_string(),
            data: format!("profile `{app}` lacks `{counter}`"),
        },
        other => other,
    })?;
    model.predict(&x)
}

fn split_xy(dataset: &[ColocationSample]) -> (Vec<&[f64]>, Vec<f64>) {
    (
        dataset.iter().map(|s| s.features.as_slice()).collect(),
        dataset.iter().map(|s| s.degradation).collect(),
    )
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2_score(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// R^2 over `predictions`.
    pub r2: f64,
    /// Per-fold R^2; `None` where a fold's targets are constant (e.g. single-sample folds).
    pub per_fold_r2: Vec<Option<f64>>,
    pub fold_sizes: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    /// (actual, predicted) pairs, percent.
    pub predictions: Vec<(f64, f64)>,
}

impl EvaluationReport {
    fn from_predictions(
        predictions: Vec<(f64, f64)>,
        n_train: usize,
        per_fold_r2: Vec<Option<f64>>,
        fold_sizes: Vec<usize>,
    ) -> Result<Self> {
        let (actual, predicted): (Vec<f64>, Vec<f64>) = predictions.iter().copied().unzip();
        let r2 = r2_score(&actual, &predicted)?;
        Ok(EvaluationReport {
            r2,
            per_fold_r2,
            fold_sizes,
            n_train,
            n_test: predictions.len(),
            predictions,
        })
    }

    /// Mean of the defined per-fold scores, or the pooled R^2 when there are none.
    pub fn mean_fold_r2(&self) -> f64 {
        let defined: Vec<f64> = self.per_fold_r2.iter().flatten().copied().collect();
        if defined.is_empty() {
            self.r2
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

/// Seeded uniform partition into (train, test); `|test| = round(test_fraction * n)`.
pub fn holdout_split<T: Clone>(data: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let n = data.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (i, item) in data.iter().enumerate() {
        if is_test[i] {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

/// Seeded assignment of `n` indices to `k` folds; the first `n % k` folds get one extra.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} folds requires 2 <= k <= n (n = {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x6b66_6f6c_6473));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// k-fold cross-validation for any regressor produced by `fit`.
pub fn cross_validate_with<R, F>(dataset: &[ColocationSample], k: usize, seed: u64, fit: F) -> Result<EvaluationReport>
where
    R: Regressor,
    F: Fn(&[&[f64]], &[f64]) -> Result<R>,
{
    let folds = kfold_indices(dataset.len(), k, seed)?;
    let mut in_fold = vec![usize::MAX; dataset.len()];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            in_fold[i] = f;
        }
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut per_fold = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<&ColocationSample> = dataset
            .iter()
            .enumerate()
            .filter(|(i, _)| in_fold[*i] != f)
            .map(|(_, s)| s)
            .collect();
        let rows: Vec<&[f64]> = train.iter().map(|s| s.features.as_slice()).collect();
        let targets: Vec<f64> = train.iter().map(|s| s.degradation).collect();
        let model = fit(&rows, &targets)?;
        let fold_pairs: Vec<(f64, f64)> = fold
            .iter()
            .map(|&i| (dataset[i].degradation, model.predict_row(&dataset[i].features)))
            .collect();
        let (a, p): (Vec<f64>, Vec<f64>) = fold_pairs.iter().copied().unzip();
        per_fold.push(match r2_score(&a, &p) {
            Ok(r2) => Some(r2),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        });
        predictions.extend(fold_pairs);
    }
    let sizes = folds.iter().map(Vec::len).collect();
    EvaluationReport::from_predictions(predictions, dataset.len(), per_fold, sizes)
}

/// k-fold cross-validation of the forest; folds are shuffled with `hp.seed`.
pub fn cross_validate(
    dataset: &[ColocationSample],
    k: usize,
    feature_set: FeatureSet,
    hp: &ForestHyperparams,
) -> Result<EvaluationReport> {
    hp.validate()?;
    cross_validate_with(dataset, k, hp.seed, |rows, targets| {
        fit_forest(rows, targets, feature_set, hp)
    })
}

/// Trains on `train`, scores on `test`.
pub fn evaluate_holdout<R, F>(train: &[ColocationSample], test: &[ColocationSample], fit: F) -> Result<(R, EvaluationReport)>
where
    R: Regressor,
    F: FnOnce(&[&[f64]], &[f64]) -> Result<R>,
{
    let (rows, targets) = split_xy(train);
    let model = fit(&rows, &targets)?;
    let predictions: Vec<(f64, f64)> = test
        .iter()
        .map(|s| (s.degradation, model.predict_row(&s.features)))
        .collect();
    let report = EvaluationReport::from_predictions(predictions, train.len(), Vec::new(), vec![test.len()])?;
    Ok((model, report))
}

/// Holdout evaluation of a forest: split, train on the train part, score the held part.
pub fn evaluate_forest_holdout(
    dataset: &[ColocationSample],
    feature_set: FeatureSet,
    hp: &ForestHyperparams,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(DegradationModel, EvaluationReport)> {
    let (train, test) = holdout_split(dataset, test_fraction, split_seed)?;
    evaluate_holdout(&train, &test, |rows, targets| fit_forest(rows, targets, feature_set, hp))
}

/// Declared ranges for the random hyperparameter search (inclusive bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_estimators: (usize, usize),
    pub max_features: Vec<MaxFeatures>,
    pub min_samples_split: (usize, usize),
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_estimators: (1, 30),
            max_features: vec![MaxFeatures::All, MaxFeatures::Sqrt],
            min_samples_split: (2, 10),
            bootstrap: vec![true, false],
        }
    }
}

impl SearchSpace {
    /// A space containing exactly one configuration.
    pub fn point(hp: &ForestHyperparams) -> Self {
        SearchSpace {
            n_estimators: (hp.n_estimators, hp.n_estimators),
            max_features: vec![hp.max_features],
            min_samples_split: (hp.min_samples_split, hp.min_samples_split),
            bootstrap: vec![hp.bootstrap],
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = self.max_features.is_empty()
            || self.bootstrap.is_empty()
            || self.n_estimators.0 > self.n_estimators.1
            || self.min_samples_split.0 > self.min_samples_split.1;
        if empty {
            return Err(Error::InvalidParameter("search space is empty".into()));
        }
        if self.n_estimators.0 < 1 || self.min_samples_split.0 < 2 {
            return Err(Error::InvalidParameter(
                "search space allows n_estimators < 1 or min_samples_split < 2".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, seed: u64) -> ForestHyperparams {
        ForestHyperparams {
            n_estimators: rng.gen_range(self.n_estimators.0..=self.n_estimators.1),
            max_features: *self.max_features.choose(rng).expect("validated non-empty"),
            min_samples_split: rng.gen_range(self.min_samples_split.0..=self.min_samples_split.1),
            bootstrap: *self.bootstrap.choose(rng).expect("validated non-empty"),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyperparams: ForestHyperparams,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: ForestHyperparams,
    pub report: EvaluationReport,
    pub trials: Vec<Trial>,
}

/// Seeded random search scored by mean k-fold R^2.
///
/// Every candidate trains with forest seed `seed`, so trials differ only in
/// their hyperparameters. Ties go to fewer estimators, then earlier trials.
pub fn tune_hyperparameters(
    dataset: &[ColocationSample],
    budget: usize,
    space: &SearchSpace,
    k: usize,
    feature_set: FeatureSet,
    seed: u64,
) -> Result<TuneOutcome> {
    if budget < 1 {
        return Err(Error::InvalidParameter("search budget must be >= 1".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, EvaluationReport)> = None;
    for t in 0..budget {
        let hp = space.sample(&mut rng, seed);
        let report = cross_validate(dataset, k, feature_set, &hp)?;
        let score = report.mean_fold_r2();
        let better = match &best {
            None => true,
            Some((b, _)) => {
                let incumbent: &Trial = &trials[*b];
                score > incumbent.score
                    || (score == incumbent.score && hp.n_estimators < incumbent.hyperparams.n_estimators)
            }
        };
        trials.push(Trial { hyperparams: hp, score });
        if better {
            best = Some((t, report));
        }
    }
    let (b, report) = best.expect("budget >= 1");
    Ok(TuneOutcome {
        best: trials[b].hyperparams,
        report,
        trials,
    })
}

/// Ordinary least squares on standardised features with a tiny ridge term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    means: Vec<f64>,
    scales: Vec<f64>,
    weights: Vec<f64>,
    target_mean: f64,
}

impl LinearModel {
    /// Coefficients in the original feature units.
    pub fn coefficients(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.scales).map(|(w, s)| w / s).collect()
    }

    pub fn intercept(&self) -> f64 {
        self.target_mean
            - self
                .coefficients()
                .iter()
                .zip(&self.means)
                .map(|(c, m)| c * m)
                .sum::<f64>()
    }
}

impl Regressor for LinearModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.target_mean
            + x.iter()
                .zip(&self.means)
                .zip(&self.scales)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>()
    }
}

pub fn fit_least_squares(rows: &[&[f64]], targets: &[f64]) -> Result<LinearModel> {
    use nalgebra::{DMatrix, DVector};

    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = rows[0].len();
    if n <= d {
        return Err(Error::InvalidParameter(format!(
            "least squares needs more samples ({n}) than features ({d})"
        )));
    }
    let means: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let target_mean = targets.iter().sum::<f64>() / n as f64;
    let z = DMatrix::from_fn(n, d, |i, j| (rows[i][j] - means[j]) / scales[j]);
    let y = DVector::from_fn(n, |i, _| targets[i] - target_mean);
    let gram = z.transpose() * &z + DMatrix::identity(d, d) * RIDGE;
    let rhs = z.transpose() * y;
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    Ok(LinearModel {
        means,
        scales,
        weights: w.iter().copied().collect(),
        target_mean,
    })
}

/// Linear sanity baseline scored on the same holdout split as the forest.
pub fn baseline_least_squares(
    dataset: &[ColocationSample],
    test_fraction: f64,
    split_seed: u64,
) -> Result<(LinearModel, EvaluationReport)> {
    let (train, test) = holdout_split(dataset, test_fraction, split_seed)?;
    evaluate_holdout(&train, &test, fit_least_squares)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{CounterGroup, StatMode};

    const FS: FeatureSet = FeatureSet::new(CounterGroup::GenericSubset, StatMode::MeanOnly);

    fn sample(features: Vec<f64>, degradation: f64) -> ColocationSample {
        ColocationSample {
            primary_id: "p".into(),
            interfering_id: "i".into(),
            features,
            degradation,
        }
    }

    fn exact_hp() -> ForestHyperparams {
        ForestHyperparams {
            n_estimators: 1,
            max_features: MaxFeatures::All,
            min_samples_split: 2,
            bootstrap: false,
            seed: 3,
        }
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::All.count(20), 20);
        assert_eq!(MaxFeatures::Sqrt.count(20), 5);
        assert_eq!(MaxFeatures::Sqrt.count(16), 4);
        assert_eq!(MaxFeatures::Fraction(0.5).count(20), 10);
        assert_eq!(MaxFeatures::Fraction(0.01).count(20), 1);
        assert_eq!("auto".parse::<MaxFeatures>().unwrap(), MaxFeatures::All);
        assert!("1.5".parse::<MaxFeatures>().is_err());
    }

    #[test]
    fn single_tree_reproduces_targets() {
        // Hand-routable dataset: one informative feature, targets 10/50/90.
        let rows = [vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let targets = [10.0, 50.0, 90.0];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let model = fit_forest(&refs, &targets, FS, &exact_hp()).unwrap();
        // Root splits at 1.5 (left leaf 10), then 2.5 separates 50 from 90.
        match &model.trees[0] {
            TreeNode::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert!(*threshold == 1.5 || *threshold == 2.5);
            }
            leaf => panic!("expected split, got {leaf:?}"),
        }
        assert_eq!(model.predict_row(&[2.0, 0.0]), 50.0);
        for (r, t) in rows.iter().zip(targets) {
            assert_eq!(model.predict_row(r), t);
        }
    }

    #[test]
    fn constant_targets_give_constant_model() {
        let data: Vec<ColocationSample> = (0..30)
            .map(|i| sample((0..20).map(|j| (i * j) as f64).collect(), 42.0))
            .collect();
        let model = train_forest(&data, FS, &ForestHyperparams::default()).unwrap();
        assert_eq!(model.trees.len(), 22);
        for x in [vec![0.0; 20], vec![1e9; 20]] {
            assert_eq!(model.predict(&x).unwrap(), 42.0);
        }
    }

    #[test]
    fn training_errors() {
        assert!(matches!(
            train_forest(&[], FS, &ForestHyperparams::default()),
            Err(Error::EmptyDataset)
        ));
        let data = vec![sample(vec![0.0; 20], 1.0), sample(vec![0.0; 19], 2.0)];
        assert!(matches!(
            train_forest(&data, FS, &ForestHyperparams::default()),
            Err(Error::FeatureLength { .. })
        ));
        let bad = ForestHyperparams {
            min_samples_split: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn r2_examples() {
        let a = [0.0, 10.0, 20.0];
        assert_eq!(r2_score(&a, &a).unwrap(), 1.0);
        assert_eq!(r2_score(&a, &[10.0; 3]).unwrap(), 0.0);
        // 1 - 900/200
        assert_eq!(r2_score(&a, &[0.0, 10.0, 50.0]).unwrap(), -3.5);
        assert!(matches!(r2_score(&a, &[1.0]), Err(Error::LengthMismatch(3, 1))));
        assert!(matches!(r2_score(&[5.0, 5.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn holdout_sizes_and_determinism() {
        let data: Vec<u32> = (0..10).collect();
        let (train, test) = holdout_split(&data, 0.3, 7).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(holdout_split(&data, 0.3, 7).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<u32> = train.into_iter().chain(test).collect();
        all.sort();
        assert_eq!(all, data);

        let big: Vec<u32> = (0..1228).collect();
        let (tr, te) = holdout_split(&big, 0.3, 1).unwrap();
        assert_eq!(tr.len() + te.len(), 1228);
        assert_eq!(te.len(), 368);

        assert!(holdout_split(&data, 0.0, 1).is_err());
        assert!(holdout_split(&data, 1.0, 1).is_err());
    }

    #[test]
    fn fold_shapes() {
        let folds = kfold_indices(100, 5, 0).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let loo = kfold_indices(5, 5, 0).unwrap();
        assert!(loo.iter().all(|f| f.len() == 1));
        let uneven = kfold_indices(7, 3, 0).unwrap();
        assert_eq!(uneven.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert!(kfold_indices(5, 1, 0).is_err());
        assert!(kfold_indices(5, 6, 0).is_err());
    }

    #[test]
    fn leave_one_out_reports_undefined_folds() {
        let data: Vec<ColocationSample> = (0..5)
            .map(|i| sample(vec![i as f64, 0.0], 10.0 * i as f64))
            .collect();
        let report = cross_validate_with(&data, 5, 0, fit_least_squares_small).unwrap();
        assert_eq!(report.per_fold_r2, vec![None; 5]);
        assert_eq!(report.fold_sizes, vec![1; 5]);
        assert_eq!(report.n_test, 5);
    }

    fn fit_least_squares_small(rows: &[&[f64]], targets: &[f64]) -> Result<LinearModel> {
        // Drop the constant second column so n > d holds for 4-sample folds.
        let narrow: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0]]).collect();
        let refs: Vec<&[f64]> = narrow.iter().map(Vec::as_slice).collect();
        let inner = fit_least_squares(&refs, targets)?;
        Ok(LinearModel {
            means: vec![inner.means[0], 0.0],
            scales: vec![inner.scales[0], 1.0],
            weights: vec![inner.weights[0], 0.0],
            target_mean: inner.target_mean,
        })
    }

    #[test]
    fn least_squares_recovers_linear_targets() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64, ((i * 7) % 11) as f64, 1e9 + (i % 3) as f64 * 1e6])
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 5.0).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let model = fit_least_squares(&refs, &targets).unwrap();
        let pred: Vec<f64> = rows.iter().map(|r| model.predict_row(r)).collect();
        assert!((r2_score(&targets, &pred).unwrap() - 1.0).abs() < 1e-6);

        let flat = vec![7.5; 40];
        let model = fit_least_squares(&refs, &flat).unwrap();
        assert!(model.coefficients().iter().all(|c| c.abs() < 1e-12));
        assert!((model.intercept() - 7.5).abs() < 1e-9);

        assert!(fit_least_squares(&refs[..3], &targets[..3]).is_err());
    }

    #[test]
    fn tuning_edge_cases() {
        let data: Vec<ColocationSample> = (0..40)
            .map(|i| {
                let mut f = vec![0.0; 20];
                f[0] = i as f64;
                f[3] = (i % 4) as f64;
                sample(f, (i % 10) as f64 * 3.0 + (i % 4) as f64)
            })
            .collect();
        let one = tune_hyperparameters(&data, 1, &SearchSpace::default(), 5, FS, 9).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.best, one.trials[0].hyperparams);

        let point = ForestHyperparams {
            n_estimators: 4,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 3,
            bootstrap: true,
            seed: 5,
        };
        let out = tune_hyperparameters(&data, 3, &SearchSpace::point(&point), 5, FS, 5).unwrap();
        assert_eq!(out.best, point);
        let direct = cross_validate(&data, 5, FS, &point).unwrap();
        assert_eq!(out.report, direct);

        let empty = SearchSpace {
            bootstrap: vec![],
            ..Default::default()
        };
        assert!(tune_hyperparameters(&data, 2, &empty, 5, FS, 0).is_err());
        assert!(tune_hyperparameters(&data, 0, &SearchSpace::default(), 5, FS, 0).is_err());
    }

    #[test]
    fn model_json_round_trip_and_corruption() {
        let data: Vec<ColocationSample> = (0..50)
            .map(|i| {
                let mut f = vec![0.0; 20];
                f[1] = (i as f64).sin();
                f[7] = (i * i % 13) as f64;
                sample(f, (i % 7) as f64 * 1.3)
            })
            .collect();
        let model = train_forest(&data, FS, &ForestHyperparams::default()).unwrap();
        let text = model.to_json().unwrap();
        let back = DegradationModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        for s in &data {
            assert_eq!(
                back.predict(&s.features).unwrap().to_bits(),
                model.predict(&s.features).unwrap().to_bits()
            );
        }
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["trees"].as_array().unwrap().len(), 22);

        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            DegradationModel::from_json(truncated),
            Err(Error::CorruptModel(_))
        ));
        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            DegradationModel::from_json(&bumped),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }
}
