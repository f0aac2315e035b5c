//! Skip-gram with negative sampling over walk corpora, and GloVe over
//! co-occurrence matrices.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMethod, EmbeddingSet};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::rng::RngStream;
use crate::walks::{CooccurrenceMatrix, WalkCorpus};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

/// One (center, context) pair with its noise draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipGramSample {
    pub center: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub dim: usize,
    pub token_count: usize,
    /// `[input vectors | output vectors]`, each `token_count x dim`.
    pub params: Vec<f64>,
    pub noise: Vec<f64>,
}

impl SkipGramModel {
    /// Input vectors uniform in `[-0.5/dim, 0.5/dim]`, output vectors zero.
    pub fn new(token_count: usize, dim: usize, noise: Vec<f64>, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 0).rng();
        let half = 0.5 / dim as f64;
        let mut params = vec![0.0; 2 * token_count * dim];
        for p in &mut params[..token_count * dim] {
            *p = rng.random_range(-half..=half);
        }
        Self {
            dim,
            token_count,
            params,
            noise,
        }
    }

    pub fn input(&self, token: usize) -> &[f64] {
        &self.params[token * self.dim..(token + 1) * self.dim]
    }

    pub fn output(&self, token: usize) -> &[f64] {
        let base = self.token_count * self.dim;
        &self.params[base + token * self.dim..base + (token + 1) * self.dim]
    }

    /// Negated negative-sampling log-likelihood of one sample:
    /// `-ln s(v'_o . v_c) - sum_n ln s(-v'_n . v_c)`.
    pub fn sample_objective(&self, sample: &SkipGramSample) -> f64 {
        let x = self.input(sample.center);
        let mut loss = softplus(-dot(self.output(sample.context), x));
        for &n in &sample.negatives {
            loss += softplus(dot(self.output(n), x));
        }
        loss
    }

    /// Summed objective and its gradient over the flat parameter vector.
    pub fn loss_and_grad(&self, samples: &[SkipGramSample]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let base = self.token_count * d;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for s in samples {
            loss += self.sample_objective(s);
            let x = self.input(s.center);
            let targets =
                std::iter::once((s.context, 1.0)).chain(s.negatives.iter().map(|&n| (n, 0.0)));
            for (w, label) in targets {
                let g = sigmoid(dot(self.output(w), x)) - label;
                for k in 0..d {
                    grad[s.center * d + k] += g * self.params[base + w * d + k];
                    grad[base + w * d + k] += g * x[k];
                }
            }
        }
        (loss, grad)
    }
}

/// Unigram counts raised to 0.75, normalized.
pub fn noise_distribution(corpus: &WalkCorpus) -> Vec<f64> {
    let mut counts = vec![0.0f64; corpus.token_count()];
    for walk in &corpus.walks {
        for &t in walk {
            counts[t] += 1.0;
        }
    }
    for c in &mut counts {
        *c = c.powf(0.75);
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in &mut counts {
            *c /= total;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramReport {
    /// Mean per-sample objective for each epoch.
    pub epoch_objectives: Vec<f64>,
}

/// Trains skip-gram with negative sampling; the learning rate decays
/// linearly to 1e-4 of its start over all updates.
pub fn train_skipgram(
    corpus: &WalkCorpus,
    config: &SkipGramConfig,
) -> Result<(SkipGramModel, SkipGramReport)> {
    if corpus.is_empty() || corpus.walks.iter().all(|w| w.len() < 2) {
        return Err(Error::Training(
            "skip-gram corpus has no context pairs".into(),
        ));
    }
    if config.window == 0 || config.dim == 0 || config.negatives == 0 {
        return Err(Error::Config(
            "skip-gram needs window, dim and negatives >= 1".into(),
        ));
    }
    let noise = noise_distribution(corpus);
    let sampler = WeightedIndex::new(&noise).map_err(|e| Error::Training(e.to_string()))?;
    let mut model = SkipGramModel::new(corpus.token_count(), config.dim, noise, config.seed);
    let mut opt = Optimizer::new(
        OptimizerConfig::new(config.optimizer, config.learning_rate),
        model.params.len(),
    );
    let mut rng = RngStream::new(config.seed, 1).rng();

    let pairs_per_epoch: usize = corpus
        .walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.min(config.window) + (w.len() - 1 - i).min(config.window))
                .sum::<usize>()
        })
        .sum();
    let total_updates = (pairs_per_epoch * config.epochs).max(1) as f64;
    let d = config.dim;
    let base = model.token_count * d;
    let mut done = 0usize;
    let mut order: Vec<usize> = (0..corpus.walks.len()).collect();
    let mut report = SkipGramReport {
        epoch_objectives: Vec::with_capacity(config.epochs),
    };
    let mut grad_center = vec![0.0; d];
    let mut negatives = Vec::with_capacity(config.negatives);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for &wi in &order {
            let walk = &corpus.walks[wi];
            for (pos, &center) in walk.iter().enumerate() {
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window).min(walk.len() - 1);
                for cpos in lo..=hi {
                    if cpos == pos {
                        continue;
                    }
                    let context = walk[cpos];
                    negatives.clear();
                    for _ in 0..config.negatives {
                        let n = sampler.sample(&mut rng);
                        if n != context {
                            negatives.push(n);
                        }
                    }
                    let progress = done as f64 / total_updates;
                    opt.set_rate(config.learning_rate * (1.0 - progress).max(1e-4));
                    opt.begin_step();
                    done += 1;

                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    let targets =
                        std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
                    for (w, label) in targets {
                        let (x, y) = (center * d, base + w * d);
                        let score = dot(&model.params[x..x + d], &model.params[y..y + d]);
                        epoch_loss += if label > 0.0 {
                            softplus(-score)
                        } else {
                            softplus(score)
                        };
                        let g = sigmoid(score) - label;
                        for k in 0..d {
                            grad_center[k] += g * model.params[y + k];
                            let gk = g * model.params[x + k];
                            opt.update(y + k, &mut model.params[y + k], gk);
                        }
                    }
                    for k in 0..d {
                        let idx = center * d + k;
                        opt.update(idx, &mut model.params[idx], grad_center[k]);
                    }
                    epoch_pairs += 1;
                }
            }
        }
        let mean = epoch_loss / epoch_pairs.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        report.epoch_objectives.push(mean);
    }
    Ok((model, report))
}

/// Entity rows of the input vectors.
pub fn skipgram_embeddings(model: &SkipGramModel, corpus: &WalkCorpus) -> EmbeddingSet {
    let labels = (0..corpus.entity_count)
        .map(|i| corpus.token_label(i).to_string())
        .collect();
    let mut set = EmbeddingSet::new(EmbeddingMethod::Rdf2vec, model.dim, labels);
    for (i, v) in set.vectors.iter_mut().enumerate() {
        *v = Some(model.input(i).to_vec());
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveConfig {
    pub dim: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            x_max: 100.0,
            alpha: 0.75,
            epochs: 50,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adagrad,
            seed: 0,
        }
    }
}

/// `(x / x_max)^alpha`, capped at 1.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveModel {
    pub node_count: usize,
    pub dim: usize,
    pub x_max: f64,
    pub alpha: f64,
    /// `[main | context | main bias | context bias]`.
    pub params: Vec<f64>,
}

impl GloveModel {
    pub fn new(node_count: usize, config: &GloveConfig) -> Result<Self> {
        if config.x_max <= 0.0 || !(config.alpha > 0.0 && config.alpha <= 1.0) {
            return Err(Error::Config(
                "GloVe needs x_max > 0 and 0 < alpha <= 1".into(),
            ));
        }
        let d = config.dim;
        let mut rng = RngStream::new(config.seed, 0).rng();
        let half = 0.5 / d as f64;
        let mut params = vec![0.0; 2 * node_count * d + 2 * node_count];
        for p in &mut params {
            *p = rng.random_range(-half..=half);
        }
        Ok(Self {
            node_count,
            dim: d,
            x_max: config.x_max,
            alpha: config.alpha,
            params,
        })
    }

    fn offsets(&self, i: usize, j: usize) -> (usize, usize, usize, usize) {
        let (n, d) = (self.node_count, self.dim);
        (i * d, n * d + j * d, 2 * n * d + i, 2 * n * d + n + j)
    }

    /// Residual `w_i . w~_j + b_i + b~_j - ln x` for one entry.
    pub fn residual(&self, i: usize, j: usize, x: f64) -> f64 {
        let (wi, wj, bi, bj) = self.offsets(i, j);
        let d = self.dim;
        dot(&self.params[wi..wi + d], &self.params[wj..wj + d]) + self.params[bi] + self.params[bj]
            - x.ln()
    }

    /// Weighted least-squares objective over all positive entries.
    pub fn objective(&self, matrix: &CooccurrenceMatrix) -> f64 {
        matrix
            .entries()
            .filter(|&(_, _, x)| x > 0.0)
            .map(|(i, j, x)| {
                glove_weight(x, self.x_max, self.alpha) * self.residual(i, j, x).powi(2)
            })
            .sum()
    }

    pub fn loss_and_grad(&self, matrix: &CooccurrenceMatrix) -> (f64, Vec<f64>) {
        let d = self.dim;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (i, j, x) in matrix.entries().filter(|e| e.2 > 0.0) {
            let f = glove_weight(x, self.x_max, self.alpha);
            let r = self.residual(i, j, x);
            loss += f * r * r;
            let g = 2.0 * f * r;
            let (wi, wj, bi, bj) = self.offsets(i, j);
            for k in 0..d {
                grad[wi + k] += g * self.params[wj + k];
                grad[wj + k] += g * self.params[wi + k];
            }
            grad[bi] += g;
            grad[bj] += g;
        }
        (loss, grad)
    }

    /// Main plus context vector of a node.
    pub fn node_vector(&self, node: usize) -> Vec<f64> {
        let (wi, wj, _, _) = self.offsets(node, node);
        (0..self.dim)
            .map(|k| self.params[wi + k] + self.params[wj + k])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveReport {
    pub initial_objective: f64,
    /// Full objective after each epoch.
    pub epoch_objectives: Vec<f64>,
}

pub fn train_glove(
    matrix: &CooccurrenceMatrix,
    config: &GloveConfig,
) -> Result<(GloveModel, GloveReport)> {
    let entries: Vec<(usize, usize, f64)> = matrix.entries().filter(|e| e.2 > 0.0).collect();
    if entries.is_empty() {
        return Err(Error::Training(
            "co-occurrence matrix has no positive entry".into(),
        ));
    }
    let mut model = GloveModel::new(matrix.node_count, config)?;
    let mut opt = Optimizer::new(
        OptimizerConfig::new(config.optimizer, config.learning_rate),
        model.params.len(),
    );
    let mut rng = RngStream::new(config.seed, 1).rng();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let d = model.dim;
    let mut report = GloveReport {
        initial_objective: model.objective(matrix),
        epoch_objectives: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &e in &order {
            let (i, j, x) = entries[e];
            let g = 2.0 * glove_weight(x, model.x_max, model.alpha) * model.residual(i, j, x);
            let (wi, wj, bi, bj) = model.offsets(i, j);
            opt.begin_step();
            for k in 0..d {
                let gi = g * model.params[wj + k];
                let gj = g * model.params[wi + k];
                opt.update(wi + k, &mut model.params[wi + k], gi);
                opt.update(wj + k, &mut model.params[wj + k], gj);
            }
            opt.update(bi, &mut model.params[bi], g);
            opt.update(bj, &mut model.params[bj], g);
        }
        let objective = model.objective(matrix);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: objective,
            });
        }
        report.epoch_objectives.push(objective);
    }
    Ok((model, report))
}

/// Node vectors (main + context) for every node that occurs in the matrix.
pub fn glove_embeddings(
    model: &GloveModel,
    matrix: &CooccurrenceMatrix,
    labels: &[String],
) -> EmbeddingSet {
    let mut seen = vec![false; matrix.node_count];
    for (i, j, _) in matrix.entries() {
        seen[i] = true;
        seen[j] = true;
    }
    let mut set = EmbeddingSet::new(EmbeddingMethod::Kglove, model.dim, labels.to_vec());
    for (node, present) in seen.into_iter().enumerate() {
        if present {
            set.vectors[node] = Some(model.node_vector(node));
        }
    }
    set
}
