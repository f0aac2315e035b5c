//! Ranking and threshold metrics, curves, cross-validation and averaging.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::FoldPlan;
use crate::rng::{derive_index, RngStream};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A fitted model that maps feature rows to probabilities of label 1.
pub trait Scorer {
    fn score(&self, features: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Fits a [`Scorer`] on labeled rows.
pub trait Trainer {
    fn fit(&self, features: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<Box<dyn Scorer>>;
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Index order by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub area: f64,
    pub points: Vec<(f64, f64)>,
}

/// Average precision; curve points are `(recall, precision)`, one per
/// distinct score.
pub fn pr_aupr(scores: &[f64], labels: &[u8]) -> Result<Curve> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::Metric("AUPR needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut points = Vec::new();
    for group in tie_groups(scores) {
        for &i in &group {
            if labels[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(Curve { area, points })
}

/// Mann-Whitney AUC with ties counted one half; curve points are
/// `(fpr, tpr)` starting at the origin.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Curve> {
    check_lengths(scores, labels)?;
    let p = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Metric("ROC-AUC needs both classes".into()));
    }
    let groups = tie_groups(scores);
    // Ascending average ranks.
    let mut rank_sum_pos = 0.0;
    let mut above = 0usize;
    for group in groups.iter().rev() {
        let avg = above as f64 + (group.len() as f64 + 1.0) / 2.0;
        rank_sum_pos += avg * group.iter().filter(|&&i| labels[i] == 1).count() as f64;
        above += group.len();
    }
    let area = (rank_sum_pos - (p * (p + 1)) as f64 / 2.0) / (p * n) as f64;

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in &groups {
        for &i in group {
            if labels[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(Curve { area, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub f1: f64,
    pub mcc: f64,
    pub confusion: Confusion,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (
            self.tp as f64,
            self.fp as f64,
            self.tn as f64,
            self.fn_ as f64,
        );
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / denom
        }
    }
}

/// Predicts 1 where `score >= threshold`.
pub fn threshold_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ThresholdMetrics> {
    check_lengths(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(ThresholdMetrics {
        f1: c.f1(),
        mcc: c.mcc(),
        confusion: c,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Metric(format!(
            "pearson needs two equal-length vectors of >= 2 samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric(
            "pearson is undefined for a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn labels_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_score: f64,
    pub fraction_positive: f64,
    pub count: usize,
}

/// Equal-width bins on [0, 1]; empty bins are omitted.
pub fn calibration_curve(
    scores: &[f64],
    labels: &[u8],
    bins: usize,
) -> Result<Vec<CalibrationBin>> {
    check_lengths(scores, labels)?;
    if bins == 0 {
        return Err(Error::Usage("calibration needs at least one bin".into()));
    }
    let mut sum = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        sum[b] += s;
        pos[b] += l as usize;
        count[b] += 1;
    }
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| CalibrationBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            mean_score: sum[b] / count[b] as f64,
            fraction_positive: pos[b] as f64 / count[b] as f64,
            count: count[b],
        })
        .collect())
}

/// Scalar metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub aupr: f64,
    pub roc_auc: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Score vs. label correlation; absent when either side is constant.
    pub pearson: Option<f64>,
}

impl Metrics {
    fn fields(&self) -> [f64; 4] {
        [self.aupr, self.roc_auc, self.f1, self.mcc]
    }

    fn from_fields(f: [f64; 4], pearson: Option<f64>) -> Self {
        Self {
            aupr: f[0],
            roc_auc: f[1],
            f1: f[2],
            mcc: f[3],
            pearson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aupr: f64,
    pub roc_auc: f64,
    pub f1: f64,
    pub mcc: f64,
    pub pearson: Option<f64>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub pr_curve: Vec<(f64, f64)>,
    pub roc_curve: Vec<(f64, f64)>,
    /// Per-fold breakdown when the report aggregates cross-validation.
    pub folds: Vec<Metrics>,
    /// Per-metric standard deviation across folds.
    pub std: Option<Metrics>,
}

impl MetricsReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            aupr: self.aupr,
            roc_auc: self.roc_auc,
            f1: self.f1,
            mcc: self.mcc,
            pearson: self.pearson,
        }
    }
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let pr = pr_aupr(scores, labels)?;
    let roc = roc_auc(scores, labels)?;
    let t = threshold_metrics(scores, labels, threshold)?;
    Ok(MetricsReport {
        aupr: pr.area,
        roc_auc: roc.area,
        f1: t.f1,
        mcc: t.mcc,
        pearson: pearson(scores, &labels_f64(labels)).ok(),
        threshold,
        confusion: t.confusion,
        pr_curve: pr.points,
        roc_curve: roc.points,
        folds: Vec::new(),
        std: None,
    })
}

/// Writes `x,y` rows under the given header.
pub fn write_curve_csv<W: Write>(
    mut out: W,
    header: (&str, &str),
    points: &[(f64, f64)],
) -> Result<()> {
    writeln!(out, "{},{}", header.0, header.1)?;
    for (x, y) in points {
        writeln!(out, "{x},{y}")?;
    }
    Ok(())
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<MetricsReport>,
    /// Fold indices each fold's model was fitted on.
    pub fitted_on: Vec<Vec<usize>>,
    /// Out-of-fold score of every training-portion example.
    pub oof: Vec<Option<f64>>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl CvResult {
    /// Mean metrics with the per-fold breakdown; curves come from the
    /// pooled out-of-fold scores.
    pub fn report(&self, labels: &[u8], threshold: f64) -> Result<MetricsReport> {
        let (scores, ls): (Vec<f64>, Vec<u8>) = self
            .oof
            .iter()
            .zip(labels)
            .filter_map(|(s, &l)| s.map(|s| (s, l)))
            .unzip();
        let pooled = evaluate(&scores, &ls, threshold)?;
        Ok(MetricsReport {
            aupr: self.mean.aupr,
            roc_auc: self.mean.roc_auc,
            f1: self.mean.f1,
            mcc: self.mean.mcc,
            pearson: self.mean.pearson,
            threshold,
            confusion: pooled.confusion,
            pr_curve: pooled.pr_curve,
            roc_curve: pooled.roc_curve,
            folds: self.folds.iter().map(MetricsReport::metrics).collect(),
            std: Some(self.std),
        })
    }
}

fn mean_std(all: &[Metrics]) -> (Metrics, Metrics) {
    let n = all.len() as f64;
    let mut mean = [0.0; 4];
    for m in all {
        for (acc, v) in mean.iter_mut().zip(m.fields()) {
            *acc += v / n;
        }
    }
    let mut var = [0.0; 4];
    for m in all {
        for ((acc, v), mu) in var.iter_mut().zip(m.fields()).zip(mean) {
            *acc += (v - mu) * (v - mu) / n;
        }
    }
    let pearsons: Vec<f64> = all.iter().filter_map(|m| m.pearson).collect();
    let (pm, ps) = if pearsons.len() == all.len() {
        let mu = pearsons.iter().sum::<f64>() / n;
        let sd = (pearsons.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>() / n).sqrt();
        (Some(mu), Some(sd))
    } else {
        (None, None)
    };
    (
        Metrics::from_fields(mean, pm),
        Metrics::from_fields(var.map(f64::sqrt), ps),
    )
}

/// Fits on all folds but one, scores the held fold, `k` times.
pub fn cross_validate(
    trainer: &dyn Trainer,
    features: &[Vec<f64>],
    labels: &[u8],
    plan: &FoldPlan,
    threshold: f64,
    seed: u64,
) -> Result<CvResult> {
    if features.len() != labels.len() || labels.len() != plan.len() {
        return Err(Error::Usage(
            "features, labels and fold plan differ in length".into(),
        ));
    }
    let mut folds = Vec::with_capacity(plan.k);
    let mut fitted_on = Vec::with_capacity(plan.k);
    let mut oof = vec![None; labels.len()];
    for f in 0..plan.k {
        let wrap = |e: Error| Error::Fold {
            fold: f,
            source: Box::new(e),
        };
        let fit = plan.fit_indices(f);
        let held = plan.fold_indices(f);
        let model = trainer
            .fit(
                &gather(features, &fit),
                &gather(labels, &fit),
                derive_index(seed, f as u64),
            )
            .map_err(wrap)?;
        let scores = model.score(&gather(features, &held)).map_err(wrap)?;
        for (&i, &s) in held.iter().zip(&scores) {
            oof[i] = Some(s);
        }
        folds.push(evaluate(&scores, &gather(labels, &held), threshold).map_err(wrap)?);
        fitted_on.push(fit);
    }
    let metrics: Vec<Metrics> = folds.iter().map(MetricsReport::metrics).collect();
    let (mean, std) = mean_std(&metrics);
    Ok(CvResult {
        folds,
        fitted_on,
        oof,
        mean,
        std,
    })
}

/// Re-scores already computed out-of-fold predictions fold by fold, as
/// [`cross_validate`] would have reported them.
pub fn cv_from_scores(
    oof: &[Option<f64>],
    labels: &[u8],
    plan: &FoldPlan,
    threshold: f64,
) -> Result<CvResult> {
    if oof.len() != labels.len() || labels.len() != plan.len() {
        return Err(Error::Usage(
            "scores, labels and fold plan differ in length".into(),
        ));
    }
    let mut folds = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let held = plan.fold_indices(f);
        let scores = held
            .iter()
            .map(|&i| {
                oof[i].ok_or_else(|| Error::Usage(format!("example {i} has no out-of-fold score")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let report =
            evaluate(&scores, &gather(labels, &held), threshold).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })?;
        folds.push(report);
    }
    let metrics: Vec<Metrics> = folds.iter().map(MetricsReport::metrics).collect();
    let (mean, std) = mean_std(&metrics);
    Ok(CvResult {
        folds,
        fitted_on: (0..plan.k).map(|f| plan.fit_indices(f)).collect(),
        oof: oof.to_vec(),
        mean,
        std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub fraction: f64,
    pub train_size: usize,
    /// Mean training-subset AUPR over folds.
    pub train_score: f64,
    /// Mean held-fold AUPR over folds.
    pub validation_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<LearningPoint>,
    /// Fractions whose subset held a single class in some fold.
    pub skipped: Vec<f64>,
}

/// For each fraction and fold, fits on a stratified subset of the fold's
/// training rows and scores AUPR on that subset and on the held fold.
///
/// Subsets are nested prefixes of one shuffle per fold, and fraction 1.0
/// fits on exactly the rows [`cross_validate`] uses.
pub fn learning_curve(
    trainer: &dyn Trainer,
    features: &[Vec<f64>],
    labels: &[u8],
    fractions: &[f64],
    plan: &FoldPlan,
    seed: u64,
) -> Result<LearningCurve> {
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
        || fractions.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Usage(
            "fractions must be ascending and in (0, 1]".into(),
        ));
    }
    let mut shuffled: Vec<[Vec<usize>; 2]> = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let mut rng = RngStream::new(seed, f as u64 + 1).rng();
        let fit = plan.fit_indices(f);
        let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for i in fit {
            by_class[(labels[i] == 1) as usize].push(i);
        }
        by_class.iter_mut().for_each(|c| c.shuffle(&mut rng));
        shuffled.push(by_class);
    }

    let mut curve = LearningCurve {
        points: Vec::new(),
        skipped: Vec::new(),
    };
    'fractions: for &fraction in fractions {
        let (mut train_sum, mut val_sum, mut size) = (0.0, 0.0, 0);
        for (f, by_class) in shuffled.iter().enumerate() {
            let mut subset: Vec<usize> = by_class
                .iter()
                .flat_map(|c| {
                    c[..((fraction * c.len() as f64).ceil() as usize).min(c.len())]
                        .iter()
                        .copied()
                })
                .collect();
            subset.sort_unstable();
            let sub_labels = gather(labels, &subset);
            if !sub_labels.contains(&0) || !sub_labels.contains(&1) {
                curve.skipped.push(fraction);
                continue 'fractions;
            }
            let wrap = |e: Error| Error::Fold {
                fold: f,
                source: Box::new(e),
            };
            let sub_features = gather(features, &subset);
            let model = trainer
                .fit(&sub_features, &sub_labels, derive_index(seed, f as u64))
                .map_err(wrap)?;
            let train_scores = model.score(&sub_features).map_err(wrap)?;
            train_sum += pr_aupr(&train_scores, &sub_labels).map_err(wrap)?.area;
            let held = plan.fold_indices(f);
            let val_scores = model.score(&gather(features, &held)).map_err(wrap)?;
            val_sum += pr_aupr(&val_scores, &gather(labels, &held))
                .map_err(wrap)?
                .area;
            size += subset.len();
        }
        let k = plan.k as f64;
        curve.points.push(LearningPoint {
            fraction,
            train_size: size / plan.k,
            train_score: train_sum / k,
            validation_score: val_sum / k,
        });
    }
    Ok(curve)
}

/// Elementwise mean of member score lists.
pub fn ensemble_average(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Usage("ensemble needs at least one member".into()))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::Usage("ensemble members differ in length".into()));
    }
    if members.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Usage(
            "ensemble members must be probabilities".into(),
        ));
    }
    let n = members.len() as f64;
    // Offsets from the first member, so identical members average exactly.
    Ok((0..first.len())
        .map(|i| first[i] + members.iter().map(|m| m[i] - first[i]).sum::<f64>() / n)
        .collect())
}
