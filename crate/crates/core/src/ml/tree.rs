use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MlError, TrainingTable};
use crate::num::sse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { n_trees: 50, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 3, subsample: 1.0 }
    }
}

impl Hyperparams {
    fn check(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::InvalidHyperparams(m.into()));
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0,1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0,1]");
        }
        Ok(())
    }
}

/// Arena node. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Parent SSE minus the children's SSE, on the residuals this tree fit.
        gain: f64,
        samples: usize,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub features: Vec<String>,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl TrainedModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    /// Stable identifier derived from the serialized model (FNV-1a).
    pub fn model_id(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        alloc::format!("gbdt-{h:016x}")
    }
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    resid: &'a [f64],
    hp: &'a Hyperparams,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn values(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.resid[i]).collect()
    }

    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = crate::num::mean(&self.values(idx)).unwrap_or(0.0) * self.hp.learning_rate;
        self.nodes.push(Node::Leaf { value, samples: idx.len() });
        self.nodes.len() - 1
    }

    /// Exhaustive split search; strict `>` keeps the lowest feature index and
    /// then the lowest threshold among equal gains.
    fn best_split(&self, idx: &[usize]) -> Option<Best> {
        let n = idx.len();
        let min_leaf = self.hp.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = idx.iter().map(|&i| self.resid[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.resid[i] * self.resid[i]).sum();
        let parent = total_sq - total * total / n as f64;
        let floor = 1e-12 * parent.abs().max(f64::MIN_POSITIVE);
        let n_features = self.rows.first().map_or(0, Vec::len);

        let mut best: Option<Best> = None;
        let mut order = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 1..n {
                let r = self.resid[order[k - 1]];
                left_sum += r;
                left_sq += r * r;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let a = self.rows[order[k - 1]][f];
                let b = self.rows[order[k]][f];
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let left_sse = left_sq - left_sum * left_sum / k as f64;
                let right_sse = right_sq - right_sum * right_sum / (n - k) as f64;
                let gain = parent - left_sse - right_sse;
                if gain > floor && best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Best { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        if depth >= self.hp.max_depth {
            return self.leaf(idx);
        }
        let Some(best) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        // Stored gain uses two-pass SSE so per-tree gains telescope exactly.
        let gain = (sse(&self.values(idx)) - sse(&self.values(&left)) - sse(&self.values(&right))).max(0.0);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, samples: 0 });
        let l = self.grow(&left, depth + 1);
        let r = self.grow(&right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain,
            samples: idx.len(),
            left: l,
            right: r,
        };
        at
    }
}

/// Squared-error gradient boosting. Deterministic for (table, hyperparams,
/// seed); the seed only matters when `subsample < 1`. A constant target
/// yields a base-score-only model.
pub fn train(table: &TrainingTable, hp: &Hyperparams, seed: u64) -> Result<TrainedModel, MlError> {
    hp.check()?;
    if table.rows.is_empty() {
        return Err(MlError::InvalidTable("no rows".into()));
    }
    let n = table.rows.len();
    let base_score = crate::num::mean(&table.target).unwrap_or(0.0);
    let mut model =
        TrainedModel { features: table.features.clone(), base_score, trees: Vec::new(), hyperparams: *hp, seed };
    if table.target.iter().all(|&y| y == table.target[0]) {
        model.base_score = table.target[0];
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pred = vec![base_score; n];
    let take = ((n as f64 * hp.subsample) as usize).clamp(1, n);
    for _ in 0..hp.n_trees {
        let resid: Vec<f64> = table.target.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        if take < n {
            idx.shuffle(&mut rng);
            idx.truncate(take);
            idx.sort_unstable();
        }
        let mut grower = Grower { rows: &table.rows, resid: &resid, hp, nodes: Vec::new() };
        grower.grow(&idx, 0);
        let tree = Tree { nodes: grower.nodes };
        if tree.nodes.len() == 1 && take == n {
            break;
        }
        for (p, row) in pred.iter_mut().zip(&table.rows) {
            *p += tree.predict(row);
        }
        model.trees.push(tree);
    }
    Ok(model)
}
