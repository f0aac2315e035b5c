//! CART trees: Gini classification trees for forests and Newton
//! regression trees for gradient boosting.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` uses all.
    pub max_features: Option<usize>,
}

/// Split criterion over additive two-component node statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Stats `(count, positives)`; leaf value is the positive fraction.
    Gini,
    /// Stats `(sum grad, sum hess)`; leaf value is the Newton step.
    Newton { lambda: f64 },
}

impl Criterion {
    /// Larger is better; children beat the parent by the split gain.
    fn score(&self, s: [f64; 2]) -> f64 {
        match *self {
            Criterion::Gini if s[0] > 0.0 => -2.0 * s[1] * (s[0] - s[1]) / s[0],
            Criterion::Gini => 0.0,
            Criterion::Newton { lambda } => s[0] * s[0] / (s[1] + lambda),
        }
    }

    fn leaf(&self, s: [f64; 2]) -> f64 {
        match *self {
            Criterion::Gini if s[0] > 0.0 => s[1] / s[0],
            Criterion::Gini => 0.0,
            Criterion::Newton { lambda } => -s[0] / (s[1] + lambda),
        }
    }

    fn is_pure(&self, s: [f64; 2]) -> bool {
        match self {
            Criterion::Gini => s[1] == 0.0 || s[1] == s[0],
            Criterion::Newton { .. } => false,
        }
    }
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    stats: &'a [[f64; 2]],
    params: TreeParams,
    criterion: Criterion,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

impl<R: Rng> Builder<'_, R> {
    fn best_split(&self, rows: &[usize], features: &[usize], total: [f64; 2]) -> Option<Best> {
        let parent = self.criterion.score(total);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut sorted = rows.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = [0.0, 0.0];
            for pos in 0..sorted.len() - 1 {
                left = add(left, self.stats[sorted[pos]]);
                let (lo, hi) = (self.x[sorted[pos]][f], self.x[sorted[pos + 1]][f]);
                if lo == hi || pos + 1 < min_leaf || sorted.len() - pos - 1 < min_leaf {
                    continue;
                }
                let gain =
                    self.criterion.score(left) + self.criterion.score(sub(total, left)) - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Best {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let total = rows
            .iter()
            .fold([0.0, 0.0], |acc, &i| add(acc, self.stats[i]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.criterion.leaf(total),
        });
        let depth_left = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_left
            || rows.len() < 2 * self.params.min_samples_leaf.max(1)
            || self.criterion.is_pure(total)
        {
            return id;
        }
        let d = self.x[0].len();
        let drawn = self.params.max_features.unwrap_or(d).clamp(1, d);
        let order: Vec<usize> = if drawn < d {
            index::sample(self.rng, d, d).into_vec()
        } else {
            (0..d).collect()
        };
        // The drawn features first; the rest only if none of them can split.
        let mut found = self.best_split(rows, &order[..drawn], total);
        if found.is_none() && drawn < d {
            found = self.best_split(rows, &order[drawn..], total);
        }
        let Some(best) = found else {
            return id;
        };
        if best.gain < -1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows one tree on `rows` (repeats allowed, as in bootstrap samples).
pub fn grow_tree<R: Rng>(
    x: &[Vec<f64>],
    stats: &[[f64; 2]],
    rows: &[usize],
    params: TreeParams,
    criterion: Criterion,
    rng: &mut R,
) -> Tree {
    let mut b = Builder {
        x,
        stats,
        params,
        criterion,
        rng,
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    Tree { nodes: b.nodes }
}
