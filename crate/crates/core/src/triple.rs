//! Translation and factorization embeddings: TransE, ComplEx, SimplE.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMethod, EmbeddingSet};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::RngStream;
use crate::shallow::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleMethod {
    Transe,
    Complex,
    Simple,
}

impl TripleMethod {
    /// Number of per-entity and per-relation tables.
    fn tables(self) -> (usize, usize) {
        match self {
            Self::Transe => (1, 1),
            Self::Complex | Self::Simple => (2, 2),
        }
    }

    pub fn embedding_method(self) -> EmbeddingMethod {
        match self {
            Self::Transe => EmbeddingMethod::Transe,
            Self::Complex => EmbeddingMethod::Complex,
            Self::Simple => EmbeddingMethod::Simple,
        }
    }
}

impl fmt::Display for TripleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.embedding_method().as_str())
    }
}

impl FromStr for TripleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Self::Transe),
            "complex" => Ok(Self::Complex),
            "simple" => Ok(Self::Simple),
            other => Err(Error::Usage(format!(
                "unknown triple embedding method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Norm {
    L1,
    L2,
}

/// Entity and relation tables for one method, stored flat.
///
/// Layout: all entity tables (`entity_count x dim` each), then all relation
/// tables (`relation_count x dim` each).
///
/// | method  | entity tables      | relation tables      |
/// |---------|--------------------|----------------------|
/// | transe  | vector             | translation          |
/// | complex | real, imaginary    | real, imaginary      |
/// | simple  | head, tail         | forward, inverse     |
#[derive(Debug, Clone, PartialEq)]
pub struct TripleEmbedding {
    pub method: TripleMethod,
    pub dim: usize,
    pub norm: Norm,
    pub entity_count: usize,
    pub relation_count: usize,
    pub params: Vec<f64>,
}

impl TripleEmbedding {
    pub fn zeros(
        method: TripleMethod,
        dim: usize,
        entity_count: usize,
        relation_count: usize,
    ) -> Self {
        let (et, rt) = method.tables();
        Self {
            method,
            dim,
            norm: Norm::L2,
            entity_count,
            relation_count,
            params: vec![0.0; (et * entity_count + rt * relation_count) * dim],
        }
    }

    pub fn entity_offset(&self, table: usize, entity: usize) -> usize {
        (table * self.entity_count + entity) * self.dim
    }

    pub fn relation_offset(&self, table: usize, relation: usize) -> usize {
        let (et, _) = self.method.tables();
        (et * self.entity_count + table * self.relation_count + relation) * self.dim
    }

    pub fn entity(&self, table: usize, entity: usize) -> &[f64] {
        let o = self.entity_offset(table, entity);
        &self.params[o..o + self.dim]
    }

    pub fn entity_mut(&mut self, table: usize, entity: usize) -> &mut [f64] {
        let o = self.entity_offset(table, entity);
        &mut self.params[o..o + self.dim]
    }

    pub fn relation(&self, table: usize, relation: usize) -> &[f64] {
        let o = self.relation_offset(table, relation);
        &self.params[o..o + self.dim]
    }

    pub fn relation_mut(&mut self, table: usize, relation: usize) -> &mut [f64] {
        let o = self.relation_offset(table, relation);
        &mut self.params[o..o + self.dim]
    }

    fn expect(&self, method: TripleMethod) -> Result<()> {
        if self.method != method {
            return Err(Error::Usage(format!(
                "expected a {method} embedding, found {}",
                self.method
            )));
        }
        Ok(())
    }

    pub fn score(&self, t: Triple) -> f64 {
        match self.method {
            TripleMethod::Transe => self.transe(t),
            TripleMethod::Complex => self.complex(t),
            TripleMethod::Simple => self.simple(t),
        }
    }

    fn transe(&self, t: Triple) -> f64 {
        let (h, r, tl) = (
            self.entity(0, t.head),
            self.relation(0, t.relation),
            self.entity(0, t.tail),
        );
        let deltas = h.iter().zip(r).zip(tl).map(|((h, r), t)| h + r - t);
        match self.norm {
            Norm::L1 => -deltas.map(f64::abs).sum::<f64>(),
            Norm::L2 => -deltas.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }

    fn complex(&self, t: Triple) -> f64 {
        let (hr, hi) = (self.entity(0, t.head), self.entity(1, t.head));
        let (rr, ri) = (self.relation(0, t.relation), self.relation(1, t.relation));
        let (tr, ti) = (self.entity(0, t.tail), self.entity(1, t.tail));
        (0..self.dim)
            .map(|k| {
                (hr[k] * rr[k] - hi[k] * ri[k]) * tr[k] + (hr[k] * ri[k] + hi[k] * rr[k]) * ti[k]
            })
            .sum()
    }

    fn simple(&self, t: Triple) -> f64 {
        let forward: f64 = (0..self.dim)
            .map(|k| {
                self.entity(0, t.head)[k]
                    * self.relation(0, t.relation)[k]
                    * self.entity(1, t.tail)[k]
            })
            .sum();
        let inverse: f64 = (0..self.dim)
            .map(|k| {
                self.entity(0, t.tail)[k]
                    * self.relation(1, t.relation)[k]
                    * self.entity(1, t.head)[k]
            })
            .sum();
        0.5 * (forward + inverse)
    }

    /// Adds `coef * d score / d params` into `grad`.
    fn add_score_grad(&self, t: Triple, coef: f64, grad: &mut [f64]) {
        let d = self.dim;
        match self.method {
            TripleMethod::Transe => {
                let (ho, ro, to) = (
                    self.entity_offset(0, t.head),
                    self.relation_offset(0, t.relation),
                    self.entity_offset(0, t.tail),
                );
                let delta: Vec<f64> = (0..d)
                    .map(|k| self.params[ho + k] + self.params[ro + k] - self.params[to + k])
                    .collect();
                let dir: Vec<f64> = match self.norm {
                    Norm::L1 => delta
                        .iter()
                        .map(|x| -x.signum() * (*x != 0.0) as u8 as f64)
                        .collect(),
                    Norm::L2 => {
                        let n = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if n == 0.0 {
                            vec![0.0; d]
                        } else {
                            delta.iter().map(|x| -x / n).collect()
                        }
                    }
                };
                for k in 0..d {
                    grad[ho + k] += coef * dir[k];
                    grad[ro + k] += coef * dir[k];
                    grad[to + k] -= coef * dir[k];
                }
            }
            TripleMethod::Complex => {
                let (hr, hi) = (self.entity_offset(0, t.head), self.entity_offset(1, t.head));
                let (rr, ri) = (
                    self.relation_offset(0, t.relation),
                    self.relation_offset(1, t.relation),
                );
                let (tr, ti) = (self.entity_offset(0, t.tail), self.entity_offset(1, t.tail));
                let p = &self.params;
                for k in 0..d {
                    let (a, b) = (p[hr + k], p[hi + k]);
                    let (c, e_) = (p[rr + k], p[ri + k]);
                    let (e, f) = (p[tr + k], p[ti + k]);
                    grad[hr + k] += coef * (c * e + e_ * f);
                    grad[hi + k] += coef * (-e_ * e + c * f);
                    grad[rr + k] += coef * (a * e + b * f);
                    grad[ri + k] += coef * (-b * e + a * f);
                    grad[tr + k] += coef * (a * c - b * e_);
                    grad[ti + k] += coef * (a * e_ + b * c);
                }
            }
            TripleMethod::Simple => {
                let (hh, ht) = (self.entity_offset(0, t.head), self.entity_offset(1, t.head));
                let (th, tt) = (self.entity_offset(0, t.tail), self.entity_offset(1, t.tail));
                let (rf, ri) = (
                    self.relation_offset(0, t.relation),
                    self.relation_offset(1, t.relation),
                );
                let p = &self.params;
                let c = 0.5 * coef;
                for k in 0..d {
                    grad[hh + k] += c * p[rf + k] * p[tt + k];
                    grad[rf + k] += c * p[hh + k] * p[tt + k];
                    grad[tt + k] += c * p[hh + k] * p[rf + k];
                    grad[th + k] += c * p[ri + k] * p[ht + k];
                    grad[ri + k] += c * p[th + k] * p[ht + k];
                    grad[ht + k] += c * p[th + k] * p[ri + k];
                }
            }
        }
    }

    /// Offsets of every vector a triple touches (for regularization).
    fn touched(&self, t: Triple) -> Vec<usize> {
        let (et, rt) = self.method.tables();
        let mut v = Vec::with_capacity(2 * et + rt);
        for table in 0..et {
            v.push(self.entity_offset(table, t.head));
            v.push(self.entity_offset(table, t.tail));
        }
        for table in 0..rt {
            v.push(self.relation_offset(table, t.relation));
        }
        v
    }

    /// Projects TransE entity vectors onto the unit ball.
    fn normalize_entities(&mut self) {
        for e in 0..self.entity_count {
            let v = self.entity_mut(0, e);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// Mean loss over `items` and its gradient.
    pub fn loss_and_grad(&self, items: &[LossItem], loss: &LossConfig) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let total = self.accumulate(items, loss, &mut grad);
        (total, grad)
    }

    fn accumulate(&self, items: &[LossItem], loss: &LossConfig, grad: &mut [f64]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        let scale = 1.0 / items.len() as f64;
        let mut total = 0.0;
        for item in items {
            match *item {
                LossItem::Margin { positive, negative } => {
                    let l = loss.margin - self.score(positive) + self.score(negative);
                    if l > 0.0 {
                        total += l;
                        self.add_score_grad(positive, -scale, grad);
                        self.add_score_grad(negative, scale, grad);
                    }
                }
                LossItem::Labeled { triple, label } => {
                    let s = self.score(triple);
                    total += softplus(-label * s);
                    self.add_score_grad(triple, -label * sigmoid(-label * s) * scale, grad);
                    if loss.regularization > 0.0 {
                        for o in self.touched(triple) {
                            for k in 0..self.dim {
                                let x = self.params[o + k];
                                total += loss.regularization * x * x;
                                grad[o + k] += 2.0 * loss.regularization * x * scale;
                            }
                        }
                    }
                }
            }
        }
        total * scale
    }

    /// Per-entity vectors for pair features: TransE as is, ComplEx as
    /// `[real | imaginary]`, SimplE as `[head | tail]`.
    pub fn to_embedding_set(&self, labels: &[String]) -> EmbeddingSet {
        let (et, _) = self.method.tables();
        let mut set = EmbeddingSet::new(
            self.method.embedding_method(),
            et * self.dim,
            labels.to_vec(),
        );
        for (e, slot) in set.vectors.iter_mut().enumerate() {
            let mut v = Vec::with_capacity(et * self.dim);
            for table in 0..et {
                v.extend_from_slice(self.entity(table, e));
            }
            *slot = Some(v);
        }
        set
    }
}

pub fn score_transe(model: &TripleEmbedding, t: Triple) -> Result<f64> {
    model.expect(TripleMethod::Transe)?;
    Ok(model.transe(t))
}

pub fn score_complex(model: &TripleEmbedding, t: Triple) -> Result<f64> {
    model.expect(TripleMethod::Complex)?;
    Ok(model.complex(t))
}

pub fn score_simple(model: &TripleEmbedding, t: Triple) -> Result<f64> {
    model.expect(TripleMethod::Simple)?;
    Ok(model.simple(t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossItem {
    /// Margin ranking term `max(0, margin - s(pos) + s(neg))`.
    Margin { positive: Triple, negative: Triple },
    /// Logistic term `softplus(-label * s)` with `label` in {-1, +1}.
    Labeled { triple: Triple, label: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub regularization: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            regularization: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSamplingConfig {
    /// Negatives per positive.
    pub ratio: usize,
    pub filtered: bool,
    pub seed: u64,
}

impl Default for NegativeSamplingConfig {
    fn default() -> Self {
        Self {
            ratio: 15,
            filtered: true,
            seed: 0,
        }
    }
}

/// Replaces the head or the tail (fair coin) with a uniform entity.
///
/// Draw `draw_index` uses its own stream, so corruptions are reproducible
/// one by one. In filtered mode, known triples are rejected and redrawn up
/// to `100 * entity_count` times.
pub fn corrupt_triple(
    triple: Triple,
    graph: &KnowledgeGraph,
    config: &NegativeSamplingConfig,
    draw_index: u64,
) -> Result<Triple> {
    let n = graph.entity_count();
    if n == 0 {
        return Err(Error::Sampling(
            "cannot corrupt triples of an empty graph".into(),
        ));
    }
    let mut rng = RngStream::new(config.seed, draw_index).rng();
    let attempts = if config.filtered { 100 * n } else { 1 };
    for _ in 0..attempts {
        let entity = rng.random_range(0..n);
        let candidate = if rng.random_bool(0.5) {
            Triple::new(entity, triple.relation, triple.tail)
        } else {
            Triple::new(triple.head, triple.relation, entity)
        };
        if !config.filtered || !graph.contains(&candidate) {
            return Ok(candidate);
        }
    }
    Err(Error::Sampling(format!(
        "no negative found for {triple:?} after {attempts} draws"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleTrainConfig {
    pub method: TripleMethod,
    pub dim: usize,
    pub norm: Norm,
    pub loss: LossConfig,
    pub sampling: NegativeSamplingConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TripleTrainConfig {
    pub fn new(method: TripleMethod, dim: usize) -> Self {
        Self {
            method,
            dim,
            norm: Norm::L2,
            loss: LossConfig::default(),
            sampling: NegativeSamplingConfig::default(),
            epochs: 100,
            batch_size: 128,
            optimizer: OptimizerConfig::adam(0.01),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleTrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn init_triple_embedding(
    graph: &KnowledgeGraph,
    config: &TripleTrainConfig,
) -> TripleEmbedding {
    let mut model = TripleEmbedding::zeros(
        config.method,
        config.dim,
        graph.entity_count(),
        graph.relation_count(),
    );
    model.norm = config.norm;
    let bound = match config.method {
        TripleMethod::Transe => 6.0 / (config.dim as f64).sqrt(),
        _ => 1.0 / (config.dim as f64).sqrt(),
    };
    let mut rng = RngStream::new(config.seed, 0).rng();
    for p in &mut model.params {
        *p = rng.random_range(-bound..=bound);
    }
    if config.method == TripleMethod::Transe {
        model.normalize_entities();
    }
    model
}

/// Mini-batch training over all triples of `graph`, with `ratio`
/// corruptions per positive.
pub fn train_triple_embeddings(
    graph: &KnowledgeGraph,
    config: &TripleTrainConfig,
) -> Result<(TripleEmbedding, TripleTrainReport)> {
    if graph.triples().is_empty() {
        return Err(Error::Training("graph has no triples".into()));
    }
    if config.dim == 0 || config.batch_size == 0 || config.sampling.ratio == 0 {
        return Err(Error::Config(
            "dim, batch size and negative ratio must be >= 1".into(),
        ));
    }
    let mut model = init_triple_embedding(graph, config);
    let mut opt = Optimizer::new(config.optimizer, model.params.len());
    let mut rng = RngStream::new(config.seed, 1).rng();
    let positives = graph.triples();
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut items = Vec::with_capacity(config.batch_size * (config.sampling.ratio + 1));
    let ratio = config.sampling.ratio as u64;
    let mut report = TripleTrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            items.clear();
            for (i, &p) in chunk.iter().enumerate() {
                let pos = positives[p];
                let slot = (epoch * positives.len() + b * config.batch_size + i) as u64;
                if config.method != TripleMethod::Transe {
                    items.push(LossItem::Labeled {
                        triple: pos,
                        label: 1.0,
                    });
                }
                for j in 0..ratio {
                    let neg = corrupt_triple(pos, graph, &config.sampling, slot * ratio + j)?;
                    items.push(match config.method {
                        TripleMethod::Transe => LossItem::Margin {
                            positive: pos,
                            negative: neg,
                        },
                        _ => LossItem::Labeled {
                            triple: neg,
                            label: -1.0,
                        },
                    });
                }
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = model.accumulate(&items, &config.loss, &mut grad);
            opt.step(&mut model.params, &grad)?;
            epoch_loss += loss;
            batches += 1;
        }
        if config.method == TripleMethod::Transe {
            model.normalize_entities();
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}
