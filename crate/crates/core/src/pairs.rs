//! Labeled drug-pair examples, negative undersampling and fold plans.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::graph::DdiDataset;
use crate::graph::Dictionary;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub u: usize,
    pub v: usize,
    /// `embedding(u) ++ embedding(v)` with `u < v`.
    pub feature: Vec<f64>,
    pub label: u8,
}

/// Canonical drug pairs in the universe that are not positives.
pub fn unknown_pairs(dataset: &DdiDataset) -> Vec<(usize, usize)> {
    let positives: HashSet<(usize, usize)> = dataset.positives().collect();
    let ids: Vec<usize> = dataset.universe.ids().collect();
    let mut out = Vec::new();
    for (i, &u) in ids.iter().enumerate() {
        for &v in &ids[i + 1..] {
            if !positives.contains(&(u, v)) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Uniform sample without replacement of `round(ratio * |positives|)`
/// unknown pairs, in canonical enumeration order.
pub fn sample_negative_pairs(
    dataset: &DdiDataset,
    ratio: f64,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Sampling(format!(
            "negative ratio must be > 0, got {ratio}"
        )));
    }
    let unknowns = unknown_pairs(dataset);
    let count = (ratio * dataset.pairs.len() as f64).round() as usize;
    if count > unknowns.len() {
        return Err(Error::Sampling(format!(
            "need {count} negative pairs but only {} unknown pairs exist",
            unknowns.len()
        )));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let mut picked = index::sample(&mut rng, unknowns.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| unknowns[i]).collect())
}

/// Positives (label 1) followed by the given negatives (label 0).
pub fn labeled_pairs(
    dataset: &DdiDataset,
    negatives: &[(usize, usize)],
) -> Vec<(usize, usize, u8)> {
    dataset
        .positives()
        .map(|(u, v)| (u, v, 1))
        .chain(negatives.iter().map(|&(u, v)| (u, v, 0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub examples: Vec<PairExample>,
    /// Pairs dropped because a drug has no embedding.
    pub filtered: usize,
}

impl PairFeatures {
    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.examples.iter().map(|e| e.feature.clone()).collect()
    }
}

pub fn build_pair_features(
    pairs: &[(usize, usize, u8)],
    embeddings: &EmbeddingSet,
) -> Result<PairFeatures> {
    let mut examples = Vec::with_capacity(pairs.len());
    let mut filtered = 0;
    for &(a, b, label) in pairs {
        let (u, v) = (a.min(b), a.max(b));
        match (embeddings.get(u), embeddings.get(v)) {
            (Some(x), Some(y)) => {
                let mut feature = Vec::with_capacity(x.len() + y.len());
                feature.extend_from_slice(x);
                feature.extend_from_slice(y);
                examples.push(PairExample {
                    u,
                    v,
                    feature,
                    label,
                });
            }
            _ => filtered += 1,
        }
    }
    if examples.is_empty() {
        return Err(Error::Pipeline(format!(
            "no pair has embeddings for both drugs ({filtered} filtered)"
        )));
    }
    if filtered > 0 {
        log::info!("{filtered} pairs dropped for lack of embeddings");
    }
    Ok(PairFeatures { examples, filtered })
}

/// Outer holdout split plus k folds over the remaining examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold of each training example; `None` for held-out examples.
    pub fold: Vec<Option<usize>>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.fold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold.is_empty()
    }

    pub fn is_holdout(&self, i: usize) -> bool {
        self.fold[i].is_none()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_holdout(i)).collect()
    }

    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_holdout(i)).collect()
    }

    /// Training-portion examples outside fold `f`.
    pub fn fit_indices(&self, f: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| matches!(self.fold[i], Some(g) if g != f))
            .collect()
    }

    pub fn fold_indices(&self, f: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.fold[i] == Some(f))
            .collect()
    }
}

/// Holdout first (stratified by label when `stratified`), then k folds on
/// the training portion.
pub fn make_folds(
    labels: &[u8],
    k: usize,
    holdout_fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Usage(format!("k must be >= 2, got {k}")));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Usage(format!(
            "holdout fraction must be in [0, 1), got {holdout_fraction}"
        )));
    }
    let n = labels.len();
    let mut rng = RngStream::new(seed, 0).rng();
    let groups: Vec<Vec<usize>> = if stratified {
        [0u8, 1]
            .iter()
            .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut groups: Vec<Vec<usize>> = groups
        .into_iter()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .collect();

    let mut fold = vec![None; n];
    let total_holdout = (holdout_fraction * n as f64).round() as usize;
    let mut remaining = total_holdout;
    let group_count = groups.len();
    let mut train_groups = Vec::with_capacity(group_count);
    for (gi, g) in groups.iter_mut().enumerate() {
        let take = if gi + 1 == group_count {
            remaining
        } else {
            ((holdout_fraction * g.len() as f64).round() as usize).min(remaining)
        }
        .min(g.len());
        remaining -= take;
        train_groups.push(g.split_off(take));
    }

    let mut offset = 0;
    for (gi, g) in train_groups.iter().enumerate() {
        if stratified && g.len() < k {
            return Err(Error::Stratification(format!(
                "class {gi} has {} training examples, fewer than k = {k}",
                g.len()
            )));
        }
        for (j, &i) in g.iter().enumerate() {
            fold[i] = Some((offset + j) % k);
        }
        offset += g.len();
    }
    Ok(FoldPlan { k, fold })
}

/// Writes `drug_u  drug_v  label  fold`; held-out rows carry `holdout`.
pub fn write_pair_tsv<W: Write>(
    mut out: W,
    examples: &[PairExample],
    plan: &FoldPlan,
    entities: &Dictionary,
) -> Result<()> {
    writeln!(out, "drug_u\tdrug_v\tlabel\tfold")?;
    for (e, fold) in examples.iter().zip(&plan.fold) {
        let fold = fold.map_or_else(|| "holdout".to_string(), |f| f.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{fold}",
            entities.label(e.u),
            entities.label(e.v),
            e.label
        )?;
    }
    Ok(())
}
