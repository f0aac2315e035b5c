//! Edge-labeled random walks and personalized-PageRank co-occurrence.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::graph::KnowledgeGraph;
use crate::rng::RngStream;

/// Token sequences over a shared entity+relation vocabulary.
///
/// Token `i < entity_count` is entity `i`; token `entity_count + r` is
/// relation `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
    pub entity_count: usize,
    labels: Vec<String>,
}

impl WalkCorpus {
    pub fn new(walks: Vec<Vec<usize>>, entity_count: usize, labels: Vec<String>) -> Self {
        Self {
            walks,
            entity_count,
            labels,
        }
    }

    pub fn token_count(&self) -> usize {
        self.labels.len()
    }

    pub fn token_label(&self, token: usize) -> &str {
        &self.labels[token]
    }

    pub fn is_entity(&self, token: usize) -> bool {
        token < self.entity_count
    }

    pub fn is_empty(&self) -> bool {
        self.walks.iter().all(|w| w.is_empty())
    }

    /// One walk per line, space-separated token labels.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for walk in &self.walks {
            let line: Vec<&str> = walk.iter().map(|&t| self.token_label(t)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// `walks_per_entity` uniform random walks of up to `depth` hops from every
/// entity. Each entity draws from its own stream `(seed, entity)`.
pub fn generate_walks(
    graph: &KnowledgeGraph,
    walks_per_entity: usize,
    depth: usize,
    seed: u64,
) -> WalkCorpus {
    let n = graph.entity_count();
    let mut labels: Vec<String> = graph.entities().labels().to_vec();
    labels.extend(graph.relations().labels().iter().cloned());
    let mut walks = Vec::with_capacity(n * walks_per_entity);
    for start in 0..n {
        let mut rng = RngStream::new(seed, start as u64).rng();
        for _ in 0..walks_per_entity {
            let mut walk = Vec::with_capacity(2 * depth + 1);
            walk.push(start);
            let mut current = start;
            for _ in 0..depth {
                let edges = graph.out_edges(current);
                if edges.is_empty() {
                    break;
                }
                let (rel, tail) = edges[rng.random_range(0..edges.len())];
                walk.push(n + rel);
                walk.push(tail);
                current = tail;
            }
            walks.push(walk);
        }
    }
    WalkCorpus::new(walks, n, labels)
}

/// Plain directed entity graph (relations collapsed, multiplicity kept).
#[derive(Debug, Clone)]
pub struct EntityGraph {
    out: Vec<Vec<usize>>,
}

impl EntityGraph {
    pub fn forward(graph: &KnowledgeGraph) -> Self {
        let mut out = vec![Vec::new(); graph.entity_count()];
        for t in graph.triples() {
            out[t.head].push(t.tail);
        }
        Self { out }
    }

    pub fn reversed(graph: &KnowledgeGraph) -> Self {
        let mut out = vec![Vec::new(); graph.entity_count()];
        for t in graph.triples() {
            out[t.tail].push(t.head);
        }
        Self { out }
    }

    pub fn from_adjacency(out: Vec<Vec<usize>>) -> Self {
        Self { out }
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.out[node]
    }
}

/// Sparse vector as `(index, value)` pairs sorted by index.
pub type SparseVector = Vec<(usize, f64)>;

/// Approximate personalized PageRank from `source` by forward push.
///
/// The walk continues along a uniformly chosen out-edge with probability
/// `damping` and restarts at `source` otherwise; sinks restart at `source`.
/// Pushing stops once every residual is below `tolerance * max(deg, 1)`.
pub fn ppr_scores(
    graph: &EntityGraph,
    source: usize,
    damping: f64,
    tolerance: f64,
) -> SparseVector {
    let n = graph.node_count();
    let mut estimate = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut queued = vec![false; n];
    let mut touched = vec![source];
    residual[source] = 1.0;
    let mut queue = VecDeque::from([source]);
    queued[source] = true;

    let threshold = |node: usize| tolerance * graph.neighbors(node).len().max(1) as f64;

    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let r = residual[u];
        if r < threshold(u) {
            continue;
        }
        residual[u] = 0.0;
        if estimate[u] == 0.0 {
            touched.push(u);
        }
        estimate[u] += (1.0 - damping) * r;
        let neighbors = graph.neighbors(u);
        let mut push = |v: usize, amount: f64, residual: &mut [f64], touched: &mut Vec<usize>| {
            if residual[v] == 0.0 {
                touched.push(v);
            }
            residual[v] += amount;
            if !queued[v] && residual[v] >= threshold(v) {
                queued[v] = true;
                queue.push_back(v);
            }
        };
        if neighbors.is_empty() {
            push(source, damping * r, &mut residual, &mut touched);
        } else {
            let share = damping * r / neighbors.len() as f64;
            for &v in neighbors {
                push(v, share, &mut residual, &mut touched);
            }
        }
    }

    touched.sort_unstable();
    touched.dedup();
    touched
        .into_iter()
        .filter(|&i| estimate[i] > 0.0)
        .map(|i| (i, estimate[i]))
        .collect()
}

/// Row-normalized sparse co-occurrence weights between entities.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub node_count: usize,
    /// `rows[focus]` holds `(context, weight)` sorted by context.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl CooccurrenceMatrix {
    pub fn entry(&self, focus: usize, context: usize) -> f64 {
        self.rows[focus]
            .binary_search_by_key(&context, |&(c, _)| c)
            .map_or(0.0, |i| self.rows[focus][i].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nnz() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(f, row)| row.iter().map(move |&(c, w)| (f, c, w)))
    }

    /// TSV `focus<TAB>context<TAB>weight` with entity labels.
    pub fn write_tsv<W: Write>(&self, mut out: W, labels: &[String]) -> std::io::Result<()> {
        for (f, c, w) in self.entries() {
            writeln!(out, "{}\t{}\t{w:.8e}", labels[f], labels[c])?;
        }
        Ok(())
    }
}

/// Sums forward and reversed-graph PPR rows per focus entity, drops the
/// focus itself, and normalizes each row to sum 1.
pub fn build_cooccurrence(
    graph: &KnowledgeGraph,
    damping: f64,
    tolerance: f64,
) -> CooccurrenceMatrix {
    let forward = EntityGraph::forward(graph);
    let reversed = EntityGraph::reversed(graph);
    let n = graph.entity_count();
    let mut rows = Vec::with_capacity(n);
    for focus in 0..n {
        let mut row = ppr_scores(&forward, focus, damping, tolerance);
        row.extend(ppr_scores(&reversed, focus, damping, tolerance));
        row.retain(|&(c, _)| c != focus);
        row.sort_unstable_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (c, w) in row {
            match merged.last_mut() {
                Some((last, acc)) if *last == c => *acc += w,
                _ => merged.push((c, w)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, w)| w).sum();
        if total > 0.0 {
            for (_, w) in &mut merged {
                *w /= total;
            }
        }
        merged.retain(|&(_, w)| w > 0.0);
        rows.push(merged);
    }
    CooccurrenceMatrix {
        node_count: n,
        rows,
    }
}
