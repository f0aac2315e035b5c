//! Baseline classifiers written from scratch, plus random hyperparameter
//! search over cross-validation folds.

pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cross_validate, Metrics, Scorer, Trainer, DEFAULT_THRESHOLD};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::pairs::FoldPlan;
use crate::rng::{derive_index, RngStream};
use crate::shallow::sigmoid;
use tree::{grow_tree, Criterion, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Logreg,
    GaussianNb,
    Knn,
    LinearSvm,
    RandomForest,
    Gbt,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Logreg,
        BaselineKind::GaussianNb,
        BaselineKind::Knn,
        BaselineKind::LinearSvm,
        BaselineKind::RandomForest,
        BaselineKind::Gbt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Logreg => "logreg",
            Self::GaussianNb => "gaussian-nb",
            Self::Knn => "knn",
            Self::LinearSvm => "linear-svm",
            Self::RandomForest => "random-forest",
            Self::Gbt => "gbt",
        }
    }

    /// Hyperparameters used when none are given.
    pub fn defaults(self) -> HyperParams {
        let pairs: &[(&str, f64)] = match self {
            Self::Logreg => &[("epochs", 500.0), ("rate", 0.05), ("l2", 1e-4)],
            Self::GaussianNb => &[("var_floor", 1e-9)],
            Self::Knn => &[("k", 5.0)],
            Self::LinearSvm => &[("epochs", 300.0), ("rate", 0.01), ("lambda", 1e-3)],
            Self::RandomForest => &[
                ("trees", 100.0),
                ("max_depth", 0.0),
                ("min_samples_leaf", 1.0),
                ("max_features", 0.0),
                ("bootstrap", 1.0),
            ],
            Self::Gbt => &[
                ("trees", 100.0),
                ("max_depth", 3.0),
                ("shrinkage", 0.1),
                ("min_samples_leaf", 1.0),
            ],
        };
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    /// Random-search ranges per kind.
    pub fn search_space(self, budget: usize) -> SearchSpace {
        use Range::*;
        let ranges: Vec<(&str, Range)> = match self {
            Self::Logreg => vec![
                ("l2", LogUniform(1e-6, 1e-1)),
                ("rate", LogUniform(1e-3, 1e-1)),
            ],
            Self::GaussianNb => vec![("var_floor", LogUniform(1e-12, 1e-3))],
            Self::Knn => vec![("k", Choice(vec![1.0, 3.0, 5.0, 9.0, 15.0, 25.0]))],
            Self::LinearSvm => vec![
                ("lambda", LogUniform(1e-5, 1e-1)),
                ("rate", LogUniform(1e-3, 1e-1)),
            ],
            Self::RandomForest => vec![
                ("trees", Choice(vec![50.0, 100.0, 200.0])),
                ("max_depth", Choice(vec![0.0, 8.0, 16.0])),
                ("min_samples_leaf", Choice(vec![1.0, 2.0, 5.0])),
            ],
            Self::Gbt => vec![
                ("trees", Choice(vec![50.0, 100.0, 200.0])),
                ("max_depth", Choice(vec![2.0, 3.0, 4.0])),
                ("shrinkage", LogUniform(0.02, 0.3)),
            ],
        };
        SearchSpace {
            ranges: ranges
                .into_iter()
                .map(|(k, r)| (k.to_string(), r))
                .collect(),
            budget,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown baseline model `{s}`")))
    }
}

/// Named numeric hyperparameters; counts and flags are stored as floats.
pub type HyperParams = BTreeMap<String, f64>;

fn param(hp: &HyperParams, kind: BaselineKind, name: &str) -> f64 {
    hp.get(name)
        .copied()
        .unwrap_or_else(|| kind.defaults()[name])
}

fn count(hp: &HyperParams, kind: BaselineKind, name: &str) -> usize {
    param(hp, kind, name).max(0.0).round() as usize
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    fn fit(x: &[Vec<f64>]) -> Self {
        let (n, d) = (x.len() as f64, x[0].len());
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineModel {
    Logreg {
        scaler: Scaler,
        weights: Vec<f64>,
        bias: f64,
    },
    GaussianNb {
        /// log P(class) for classes 0 and 1.
        log_prior: [f64; 2],
        mean: [Vec<f64>; 2],
        var: [Vec<f64>; 2],
    },
    Knn {
        k: usize,
        features: Vec<Vec<f64>>,
        labels: Vec<u8>,
    },
    LinearSvm {
        scaler: Scaler,
        weights: Vec<f64>,
        bias: f64,
        /// Probability is `sigmoid(calibration * margin)`.
        calibration: f64,
    },
    RandomForest {
        trees: Vec<Tree>,
    },
    Gbt {
        base_score: f64,
        shrinkage: f64,
        trees: Vec<Tree>,
    },
}

fn validate(features: &[Vec<f64>], labels: &[u8]) -> Result<usize> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Fit(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::Fit("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite feature value".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Fit("training data holds a single class".into()));
    }
    Ok(d)
}

/// Full-batch training of a linear scorer `w.x + b` on standardized rows.
/// `loss_grad(margin_score, label)` returns `(loss, dloss/dscore)`.
fn fit_linear(
    x: &[Vec<f64>],
    labels: &[u8],
    epochs: usize,
    rate: f64,
    l2: f64,
    loss_grad: impl Fn(f64, u8) -> (f64, f64),
) -> Result<(Vec<f64>, f64)> {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut params = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    let mut opt = Optimizer::new(OptimizerConfig::adam(rate), d + 1);
    for epoch in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (row, &y) in x.iter().zip(labels) {
            let s = params[d] + row.iter().zip(&params).map(|(a, w)| a * w).sum::<f64>();
            let (l, g) = loss_grad(s, y);
            loss += l / n;
            for (gj, a) in grad.iter_mut().zip(row) {
                *gj += g * a / n;
            }
            grad[d] += g / n;
        }
        for j in 0..d {
            loss += 0.5 * l2 * params[j] * params[j];
            grad[j] += l2 * params[j];
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        opt.step(&mut params, &grad)?;
    }
    let bias = params.pop().expect("bias");
    Ok((params, bias))
}

/// Newton iterations for `a >= 0` maximizing the likelihood of
/// `sigmoid(a * margin)`.
fn fit_calibration(margins: &[f64], labels: &[u8]) -> f64 {
    let mut a = 1.0f64;
    for _ in 0..100 {
        let (mut g, mut h) = (0.0, 0.0);
        for (&m, &y) in margins.iter().zip(labels) {
            let p = sigmoid(a * m);
            g += (p - y as f64) * m;
            h += p * (1.0 - p) * m * m;
        }
        if h <= 1e-12 {
            break;
        }
        let next = (a - g / h).clamp(0.0, 1e6);
        let done = (next - a).abs() < 1e-10;
        a = next;
        if done {
            break;
        }
    }
    a
}

pub fn fit_baseline(
    kind: BaselineKind,
    features: &[Vec<f64>],
    labels: &[u8],
    hp: &HyperParams,
    seed: u64,
) -> Result<BaselineModel> {
    let d = validate(features, labels)?;
    let n = features.len();
    Ok(match kind {
        BaselineKind::Logreg => {
            let scaler = Scaler::fit(features);
            let x: Vec<Vec<f64>> = features.iter().map(|r| scaler.apply(r)).collect();
            let (weights, bias) = fit_linear(
                &x,
                labels,
                count(hp, kind, "epochs"),
                param(hp, kind, "rate"),
                param(hp, kind, "l2"),
                |s, y| {
                    let sign = if y == 1 { 1.0 } else { -1.0 };
                    (crate::shallow::softplus(-sign * s), sigmoid(s) - y as f64)
                },
            )?;
            BaselineModel::Logreg {
                scaler,
                weights,
                bias,
            }
        }
        BaselineKind::GaussianNb => {
            let floor = param(hp, kind, "var_floor");
            let mut mean = [vec![0.0; d], vec![0.0; d]];
            let mut var = [vec![0.0; d], vec![0.0; d]];
            let mut counts = [0usize; 2];
            for (row, &y) in features.iter().zip(labels) {
                counts[y as usize] += 1;
                for (m, v) in mean[y as usize].iter_mut().zip(row) {
                    *m += v;
                }
            }
            for c in 0..2 {
                mean[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
            }
            for (row, &y) in features.iter().zip(labels) {
                let c = y as usize;
                for j in 0..d {
                    var[c][j] += (row[j] - mean[c][j]).powi(2);
                }
            }
            for c in 0..2 {
                var[c]
                    .iter_mut()
                    .for_each(|v| *v = (*v / counts[c] as f64).max(floor));
            }
            let log_prior = [
                (counts[0] as f64 / n as f64).ln(),
                (counts[1] as f64 / n as f64).ln(),
            ];
            BaselineModel::GaussianNb {
                log_prior,
                mean,
                var,
            }
        }
        BaselineKind::Knn => BaselineModel::Knn {
            k: count(hp, kind, "k").clamp(1, n),
            features: features.to_vec(),
            labels: labels.to_vec(),
        },
        BaselineKind::LinearSvm => {
            let scaler = Scaler::fit(features);
            let x: Vec<Vec<f64>> = features.iter().map(|r| scaler.apply(r)).collect();
            let (weights, bias) = fit_linear(
                &x,
                labels,
                count(hp, kind, "epochs"),
                param(hp, kind, "rate"),
                param(hp, kind, "lambda"),
                |s, y| {
                    let sign = if y == 1 { 1.0 } else { -1.0 };
                    let slack = 1.0 - sign * s;
                    if slack > 0.0 {
                        (slack, -sign)
                    } else {
                        (0.0, 0.0)
                    }
                },
            )?;
            let margins: Vec<f64> = x
                .iter()
                .map(|r| bias + r.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>())
                .collect();
            let calibration = fit_calibration(&margins, labels);
            BaselineModel::LinearSvm {
                scaler,
                weights,
                bias,
                calibration,
            }
        }
        BaselineKind::RandomForest => {
            let n_trees = count(hp, kind, "trees");
            let depth = count(hp, kind, "max_depth");
            let max_features = match count(hp, kind, "max_features") {
                0 => ((d as f64).sqrt().round() as usize).max(1),
                m => m.min(d),
            };
            let params = TreeParams {
                max_depth: (depth > 0).then_some(depth),
                min_samples_leaf: count(hp, kind, "min_samples_leaf").max(1),
                max_features: Some(max_features),
            };
            let bootstrap = param(hp, kind, "bootstrap") != 0.0;
            let stats: Vec<[f64; 2]> = labels.iter().map(|&y| [1.0, y as f64]).collect();
            let trees = (0..n_trees)
                .map(|t| {
                    let mut rng = RngStream::new(seed, t as u64).rng();
                    let rows: Vec<usize> = if bootstrap {
                        (0..n).map(|_| rng.random_range(0..n)).collect()
                    } else {
                        (0..n).collect()
                    };
                    grow_tree(features, &stats, &rows, params, Criterion::Gini, &mut rng)
                })
                .collect();
            BaselineModel::RandomForest { trees }
        }
        BaselineKind::Gbt => {
            let rounds = count(hp, kind, "trees");
            let shrinkage = param(hp, kind, "shrinkage");
            let params = TreeParams {
                max_depth: Some(count(hp, kind, "max_depth").max(1)),
                min_samples_leaf: count(hp, kind, "min_samples_leaf").max(1),
                max_features: None,
            };
            let prior = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
            let base_score = (prior / (1.0 - prior)).ln();
            let mut raw = vec![base_score; n];
            let rows: Vec<usize> = (0..n).collect();
            let mut rng = RngStream::new(seed, 0).rng();
            let mut trees = Vec::with_capacity(rounds);
            for _ in 0..rounds {
                let stats: Vec<[f64; 2]> = raw
                    .iter()
                    .zip(labels)
                    .map(|(&f, &y)| {
                        let p = sigmoid(f);
                        [p - y as f64, (p * (1.0 - p)).max(1e-12)]
                    })
                    .collect();
                let tree = grow_tree(
                    features,
                    &stats,
                    &rows,
                    params,
                    Criterion::Newton { lambda: 1e-6 },
                    &mut rng,
                );
                for (r, row) in raw.iter_mut().zip(features) {
                    *r += shrinkage * tree.predict(row);
                }
                trees.push(tree);
            }
            BaselineModel::Gbt {
                base_score,
                shrinkage,
                trees,
            }
        }
    })
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Self::Logreg { .. } => BaselineKind::Logreg,
            Self::GaussianNb { .. } => BaselineKind::GaussianNb,
            Self::Knn { .. } => BaselineKind::Knn,
            Self::LinearSvm { .. } => BaselineKind::LinearSvm,
            Self::RandomForest { .. } => BaselineKind::RandomForest,
            Self::Gbt { .. } => BaselineKind::Gbt,
        }
    }

    /// Feature dimension the model was fitted on, if it records one.
    fn dim(&self) -> Option<usize> {
        match self {
            Self::Logreg { weights, .. } | Self::LinearSvm { weights, .. } => Some(weights.len()),
            Self::GaussianNb { mean, .. } => Some(mean[0].len()),
            Self::Knn { features, .. } => features.first().map(Vec::len),
            Self::RandomForest { .. } | Self::Gbt { .. } => None,
        }
    }

    /// Margin for linear models, raw log-odds for boosting.
    fn raw(&self, x: &[f64]) -> f64 {
        match self {
            Self::Logreg {
                scaler,
                weights,
                bias,
            }
            | Self::LinearSvm {
                scaler,
                weights,
                bias,
                ..
            } => {
                bias + scaler
                    .apply(x)
                    .iter()
                    .zip(weights)
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
            }
            Self::Gbt {
                base_score,
                shrinkage,
                trees,
            } => base_score + shrinkage * trees.iter().map(|t| t.predict(x)).sum::<f64>(),
            _ => unreachable!("no raw score"),
        }
    }

    fn proba_row(&self, x: &[f64]) -> f64 {
        match self {
            Self::Logreg { .. } | Self::Gbt { .. } => sigmoid(self.raw(x)),
            Self::LinearSvm { calibration, .. } => sigmoid(calibration * self.raw(x)),
            Self::GaussianNb {
                log_prior,
                mean,
                var,
            } => {
                let mut ll = [log_prior[0], log_prior[1]];
                for c in 0..2 {
                    for j in 0..x.len() {
                        let diff = x[j] - mean[c][j];
                        ll[c] -= 0.5
                            * ((2.0 * std::f64::consts::PI * var[c][j]).ln()
                                + diff * diff / var[c][j]);
                    }
                }
                sigmoid(ll[1] - ll[0])
            }
            Self::Knn {
                k,
                features,
                labels,
            } => {
                let mut dist: Vec<(f64, usize)> = features
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        (
                            r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                            i,
                        )
                    })
                    .collect();
                let k = (*k).min(dist.len());
                let cmp =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                dist[..k].iter().filter(|(_, i)| labels[*i] == 1).count() as f64 / k as f64
            }
            Self::RandomForest { trees } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len().max(1) as f64
            }
        }
    }

    /// Probability of label 1 per row.
    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(d) = self.dim() {
            if let Some(row) = features.iter().find(|r| r.len() != d) {
                return Err(Error::Usage(format!(
                    "model expects {d} features, got {}",
                    row.len()
                )));
            }
        }
        Ok(features
            .iter()
            .map(|r| self.proba_row(r).clamp(0.0, 1.0))
            .collect())
    }
}

impl Scorer for BaselineModel {
    fn score(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.predict_proba(features)
    }
}

/// Adapts a baseline kind with fixed hyperparameters to [`Trainer`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrainer {
    pub kind: BaselineKind,
    pub params: HyperParams,
}

impl BaselineTrainer {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            params: kind.defaults(),
        }
    }
}

impl Trainer for BaselineTrainer {
    fn fit(&self, features: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<Box<dyn Scorer>> {
        Ok(Box::new(fit_baseline(
            self.kind,
            features,
            labels,
            &self.params,
            seed,
        )?))
    }
}

/// Saved form: kind, hyperparameters and fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedBaseline {
    pub hyperparameters: HyperParams,
    pub model: BaselineModel,
}

pub fn save_baseline(model: &BaselineModel, hp: &HyperParams) -> Result<String> {
    Ok(serde_json::to_string(&SavedBaseline {
        hyperparameters: hp.clone(),
        model: model.clone(),
    })?)
}

pub fn load_baseline(json: &str) -> Result<SavedBaseline> {
    Ok(serde_json::from_str(json)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Range {
    LogUniform(f64, f64),
    Uniform(f64, f64),
    Choice(Vec<f64>),
}

impl Range {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Range::LogUniform(lo, hi) => rng.random_range(lo.ln()..=hi.ln()).exp(),
            Range::Uniform(lo, hi) => rng.random_range(*lo..=*hi),
            Range::Choice(options) => options[rng.random_range(0..options.len())],
        }
    }

    fn is_valid(&self) -> bool {
        match self {
            Range::LogUniform(lo, hi) => *lo > 0.0 && lo <= hi,
            Range::Uniform(lo, hi) => lo <= hi,
            Range::Choice(options) => !options.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub ranges: BTreeMap<String, Range>,
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Aupr,
    RocAuc,
    F1,
    Mcc,
}

impl MetricName {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            Self::Aupr => m.aupr,
            Self::RocAuc => m.roc_auc,
            Self::F1 => m.f1,
            Self::Mcc => m.mcc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: HyperParams,
    pub fold_scores: Vec<f64>,
    pub mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best: HyperParams,
    pub best_score: f64,
    pub trials: Vec<Trial>,
    pub failed: usize,
}

/// Draws `budget` configurations over the defaults and keeps the best mean
/// CV score; ties go to the earlier draw.
pub fn random_search(
    kind: BaselineKind,
    space: &SearchSpace,
    features: &[Vec<f64>],
    labels: &[u8],
    plan: &FoldPlan,
    metric: MetricName,
    seed: u64,
) -> Result<SearchReport> {
    if space.budget == 0 || space.ranges.values().any(|r| !r.is_valid()) {
        return Err(Error::Config(
            "search budget must be >= 1 and ranges non-empty".into(),
        ));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let mut trials = Vec::with_capacity(space.budget);
    let mut best: Option<(usize, f64)> = None;
    for t in 0..space.budget {
        let mut params = kind.defaults();
        for (name, range) in &space.ranges {
            params.insert(name.clone(), range.sample(&mut rng));
        }
        let trainer = BaselineTrainer { kind, params };
        let trial = match cross_validate(
            &trainer,
            features,
            labels,
            plan,
            DEFAULT_THRESHOLD,
            derive_index(seed, t as u64),
        ) {
            Ok(cv) => {
                let fold_scores: Vec<f64> =
                    cv.folds.iter().map(|f| metric.of(&f.metrics())).collect();
                let mean = metric.of(&cv.mean);
                if best.is_none_or(|(_, b)| mean > b) {
                    best = Some((t, mean));
                }
                Trial {
                    params: trainer.params,
                    fold_scores,
                    mean: Some(mean),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("{kind} search config {t} failed: {e}");
                Trial {
                    params: trainer.params,
                    fold_scores: Vec::new(),
                    mean: None,
                    error: Some(e.to_string()),
                }
            }
        };
        trials.push(trial);
    }
    let failed = trials.iter().filter(|t| t.error.is_some()).count();
    let (idx, best_score) = best
        .ok_or_else(|| Error::Fit(format!("all {} {kind} configurations failed", space.budget)))?;
    Ok(SearchReport {
        best: trials[idx].params.clone(),
        best_score,
        trials,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::make_folds;

    fn blobs(n: usize, d: usize, shift: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = RngStream::new(seed, 0).rng();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = labels
            .iter()
            .map(|&y| {
                (0..d)
                    .map(|_| rng.random_range(-1.0..1.0) + shift * y as f64)
                    .collect()
            })
            .collect();
        (x, labels)
    }

    fn accuracy(model: &BaselineModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let p = model.predict_proba(x).unwrap();
        p.iter()
            .zip(y)
            .filter(|(p, &y)| (**p >= 0.5) == (y == 1))
            .count() as f64
            / y.len() as f64
    }

    #[test]
    fn single_class_and_non_finite_are_fit_errors() {
        for kind in BaselineKind::ALL {
            let err = fit_baseline(kind, &[vec![0.0], vec![1.0]], &[1, 1], &kind.defaults(), 0);
            assert!(matches!(err, Err(Error::Fit(_))), "{kind}");
            let err = fit_baseline(
                kind,
                &[vec![f64::NAN], vec![1.0]],
                &[0, 1],
                &kind.defaults(),
                0,
            );
            assert!(matches!(err, Err(Error::Fit(_))), "{kind}");
        }
    }

    #[test]
    fn probabilities_are_valid_for_every_kind() {
        let (x, y) = blobs(120, 4, 1.0, 1);
        for kind in BaselineKind::ALL {
            let mut hp = kind.defaults();
            hp.insert("trees".into(), 10.0);
            let model = fit_baseline(kind, &x, &y, &hp, 3).unwrap();
            let p = model.predict_proba(&x).unwrap();
            assert!(p.iter().all(|p| (0.0..=1.0).contains(p)), "{kind}");
            assert!(p.iter().all(|p| (p + (1.0 - p) - 1.0).abs() == 0.0));
            assert!(accuracy(&model, &x, &y) > 0.6, "{kind}");
        }
    }

    #[test]
    fn gaussian_nb_with_identical_classes_returns_prior() {
        let x = vec![
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![0.0, 1.0],
            vec![2.0, 3.0],
        ];
        // Class 1 gets rows {0,1,2,3} and class 0 rows {4,5}: identical moments.
        let y = [1, 1, 1, 1, 0, 0];
        let m = fit_baseline(BaselineKind::GaussianNb, &x, &y, &HyperParams::new(), 0).unwrap();
        for q in [vec![0.0, 0.0], vec![10.0, -4.0], vec![1.0, 2.0]] {
            let p = m.predict_proba(&[q]).unwrap()[0];
            assert!((p - 4.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logreg_separates_sign_of_first_coordinate() {
        let mut rng = RngStream::new(2, 0).rng();
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 =
                    rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                vec![a, rng.random_range(-1.0..1.0)]
            })
            .collect();
        let y: Vec<u8> = x.iter().map(|r| (r[0] > 0.0) as u8).collect();
        let m = fit_baseline(BaselineKind::Logreg, &x, &y, &HyperParams::new(), 0).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn one_tree_without_bootstrap_memorizes() {
        let (x, y) = blobs(150, 3, 0.3, 4);
        let hp: HyperParams = [("trees", 1.0), ("bootstrap", 0.0), ("max_depth", 0.0)]
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect();
        let m = fit_baseline(BaselineKind::RandomForest, &x, &y, &hp, 0).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn knn_self_neighbor_and_global_proportion() {
        let (x, y) = blobs(30, 2, 0.5, 5);
        let hp: HyperParams = [("k".to_string(), 1.0)].into();
        let m = fit_baseline(BaselineKind::Knn, &x, &y, &hp, 0).unwrap();
        assert_eq!(
            m.predict_proba(&x).unwrap(),
            y.iter().map(|&l| l as f64).collect::<Vec<_>>()
        );
        let hp: HyperParams = [("k".to_string(), 30.0)].into();
        let m = fit_baseline(BaselineKind::Knn, &x, &y, &hp, 0).unwrap();
        assert!(m.predict_proba(&[vec![9.0, 9.0]]).unwrap()[0] == 0.5);
    }

    #[test]
    fn svm_zero_margin_is_one_half() {
        let (x, y) = blobs(60, 2, 1.5, 6);
        let m = fit_baseline(BaselineKind::LinearSvm, &x, &y, &HyperParams::new(), 0).unwrap();
        let BaselineModel::LinearSvm {
            scaler,
            weights,
            bias,
            calibration,
        } = &m
        else {
            unreachable!()
        };
        assert!(*calibration > 0.0);
        // A point on the decision boundary: move along the weight direction.
        let w2: f64 = weights.iter().map(|w| w * w).sum();
        let z: Vec<f64> = weights.iter().map(|w| -bias * w / w2).collect();
        let q: Vec<f64> = z
            .iter()
            .zip(&scaler.mean)
            .zip(&scaler.scale)
            .map(|((z, m), s)| z * s + m)
            .collect();
        assert!((m.predict_proba(&[q]).unwrap()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gbt_zero_trees_is_base_rate_and_loss_never_rises() {
        let (x, y0) = blobs(90, 3, 0.8, 7);
        let y: Vec<u8> = y0
            .iter()
            .enumerate()
            .map(|(i, &l)| if i % 3 == 0 { 1 } else { l })
            .collect();
        let rate = y.iter().filter(|&&l| l == 1).count() as f64 / y.len() as f64;
        let hp: HyperParams = [("trees".to_string(), 0.0)].into();
        let m = fit_baseline(BaselineKind::Gbt, &x, &y, &hp, 0).unwrap();
        assert!((m.predict_proba(&x[..1]).unwrap()[0] - rate).abs() < 1e-12);

        let m = fit_baseline(BaselineKind::Gbt, &x, &y, &HyperParams::new(), 0).unwrap();
        let BaselineModel::Gbt {
            base_score,
            shrinkage,
            trees,
        } = &m
        else {
            unreachable!()
        };
        let mut raw = vec![*base_score; x.len()];
        let logloss = |raw: &[f64]| -> f64 {
            raw.iter()
                .zip(&y)
                .map(|(&f, &l)| {
                    if l == 1 {
                        crate::shallow::softplus(-f)
                    } else {
                        crate::shallow::softplus(f)
                    }
                })
                .sum()
        };
        let mut prev = logloss(&raw);
        for t in trees {
            for (r, row) in raw.iter_mut().zip(&x) {
                *r += shrinkage * t.predict(row);
            }
            let now = logloss(&raw);
            assert!(now <= prev + 1e-9, "{now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let (x, y) = blobs(20, 3, 1.0, 8);
        for kind in [
            BaselineKind::Logreg,
            BaselineKind::Knn,
            BaselineKind::GaussianNb,
        ] {
            let m = fit_baseline(kind, &x, &y, &kind.defaults(), 0).unwrap();
            assert!(matches!(
                m.predict_proba(&[vec![0.0; 2]]),
                Err(Error::Usage(_))
            ));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (x, y) = blobs(40, 2, 1.0, 9);
        for kind in BaselineKind::ALL {
            let mut hp = kind.defaults();
            hp.insert("trees".into(), 5.0);
            let m = fit_baseline(kind, &x, &y, &hp, 1).unwrap();
            let back = load_baseline(&save_baseline(&m, &hp).unwrap()).unwrap();
            assert_eq!(
                back.model.predict_proba(&x).unwrap(),
                m.predict_proba(&x).unwrap()
            );
            assert_eq!(back.hyperparameters, hp);
            assert_eq!(back.model.kind(), kind);
        }
    }

    #[test]
    fn search_is_deterministic_and_budget_one_returns_its_draw() {
        let (x, y) = blobs(60, 2, 1.0, 10);
        let plan = make_folds(&y, 3, 0.0, true, 0).unwrap();
        let space = BaselineKind::Knn.search_space(1);
        let r = random_search(
            BaselineKind::Knn,
            &space,
            &x,
            &y,
            &plan,
            MetricName::Aupr,
            5,
        )
        .unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0].params);

        let space = BaselineKind::Logreg.search_space(4);
        let a = random_search(
            BaselineKind::Logreg,
            &space,
            &x,
            &y,
            &plan,
            MetricName::RocAuc,
            11,
        )
        .unwrap();
        let b = random_search(
            BaselineKind::Logreg,
            &space,
            &x,
            &y,
            &plan,
            MetricName::RocAuc,
            11,
        )
        .unwrap();
        assert_eq!(a, b);
        let max = a
            .trials
            .iter()
            .filter_map(|t| t.mean)
            .fold(f64::MIN, f64::max);
        assert_eq!(a.best_score, max);
    }

    #[test]
    fn search_prefers_dominant_config() {
        let (x, y) = blobs(400, 2, 1.0, 12);
        let plan = make_folds(&y, 4, 0.0, true, 0).unwrap();
        let space = SearchSpace {
            ranges: [("k".to_string(), Range::Choice(vec![1.0, 25.0]))].into(),
            budget: 8,
        };
        let r = random_search(
            BaselineKind::Knn,
            &space,
            &x,
            &y,
            &plan,
            MetricName::RocAuc,
            0,
        )
        .unwrap();
        let folds = |k: f64| {
            r.trials
                .iter()
                .find(|t| t.params["k"] == k)
                .map(|t| t.fold_scores.clone())
        };
        let (one, many) = (folds(1.0).unwrap(), folds(25.0).unwrap());
        assert!(
            one.iter().zip(&many).all(|(a, b)| b > a),
            "{one:?} vs {many:?}"
        );
        assert_eq!(r.best["k"], 25.0);
        let first = r.trials.iter().position(|t| t.params["k"] == 25.0).unwrap();
        assert_eq!(r.best, r.trials[first].params);
    }
}
