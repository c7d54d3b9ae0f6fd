//! Multi-output CART regression tree.
//!
//! Impurity of a node is the sum over outputs of the within-node (weighted)
//! variance. Samples carry integer weights so a bootstrap resample is just a
//! weight vector; weights count as duplicated rows everywhere, including the
//! `min_samples_*` constraints.
//!
//! Splits are searched over the non-zero entries of the sparse design matrix:
//! rows absent from a feature's entry list share the value 0 and form one
//! group whose sums are the node totals minus the non-zero sums.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::TreeParams;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf {
        /// Offset of the leaf value in `RegressionTree::values`.
        value: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Weighted number of training samples reaching the node.
    pub weight: f64,
    /// Sum over outputs of the within-node variance.
    pub impurity: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    /// `weight × impurity`, i.e. the node's total sum of squared deviations.
    pub fn weighted_impurity(&self) -> f64 {
        self.weight * self.impurity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    values: Vec<f64>,
    n_outputs: usize,
    n_features: usize,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + rec(t, left).max(rec(t, right)),
            }
        }
        rec(self, 0)
    }

    pub fn leaf_value(&self, node: usize) -> Option<&[f64]> {
        match self.nodes[node].kind {
            NodeKind::Leaf { value } => Some(&self.values[value..value + self.n_outputs]),
            NodeKind::Split { .. } => None,
        }
    }

    /// Index of the leaf reached by row `i` of `x`.
    pub fn apply(&self, x: &FeatureMatrix, i: usize) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node].kind {
                NodeKind::Leaf { .. } => return node,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x.get(i, feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, x: &FeatureMatrix, i: usize) -> &[f64] {
        self.leaf_value(self.apply(x, i)).expect("apply returns a leaf")
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let mut out = Array2::zeros((x.n_rows(), self.n_outputs));
        for i in 0..x.n_rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(self.predict_row(x, i)) {
                *o = *v;
            }
        }
        out
    }

    /// Impurity decrease `w_j C_j - w_left C_left - w_right C_right` of an
    /// internal node; `None` for leaves.
    pub fn node_impurity_decrease(&self, node: usize) -> Option<f64> {
        match self.nodes[node].kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Split { left, right, .. } => Some(
                self.nodes[node].weighted_impurity()
                    - self.nodes[left].weighted_impurity()
                    - self.nodes[right].weighted_impurity(),
            ),
        }
    }

    /// Fits a tree. `weights[i]` is the multiplicity of row `i` (0 = unused).
    pub fn fit<R: Rng>(
        x: &FeatureMatrix,
        y: ArrayView2<f64>,
        weights: &[u32],
        params: &TreeParams,
        rng: &mut R,
    ) -> RegressionTree {
        assert_eq!(x.n_rows(), y.nrows(), "rows of X and Y");
        assert_eq!(weights.len(), x.n_rows(), "one weight per row");
        let mut builder = Builder {
            x,
            y: y.view(),
            weights,
            params,
            n_candidates: params.max_features.resolve(x.width()),
            mask: vec![false; x.width()],
            entries: Vec::new(),
            tree: RegressionTree {
                nodes: Vec::new(),
                values: Vec::new(),
                n_outputs: y.ncols(),
                n_features: x.width(),
            },
        };
        let rows: Vec<usize> = (0..x.n_rows()).filter(|&i| weights[i] > 0).collect();
        builder.build(rows, rng);
        builder.tree
    }
}

struct NodeStats {
    weight: f64,
    sums: Vec<f64>,
    impurity: f64,
    pure: bool,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: ArrayView2<'a, f64>,
    weights: &'a [u32],
    params: &'a TreeParams,
    n_candidates: usize,
    mask: Vec<bool>,
    entries: Vec<(u32, f64, u32)>,
    tree: RegressionTree,
}

impl<'a> Builder<'a> {
    fn stats(&self, rows: &[usize]) -> NodeStats {
        let m = self.y.ncols();
        let mut weight = 0.0;
        let mut sums = vec![0.0; m];
        for &i in rows {
            let w = self.weights[i] as f64;
            weight += w;
            for (s, v) in sums.iter_mut().zip(self.y.row(i)) {
                *s += w * v;
            }
        }
        let mut sse = 0.0;
        let mut pure = true;
        if let Some(&first) = rows.first() {
            let first_row = self.y.row(first);
            for &i in rows {
                let w = self.weights[i] as f64;
                let row = self.y.row(i);
                for k in 0..m {
                    let d = row[k] - sums[k] / weight;
                    sse += w * d * d;
                }
                if pure && row != first_row {
                    pure = false;
                }
            }
        }
        NodeStats {
            weight,
            impurity: if weight > 0.0 { sse / weight } else { 0.0 },
            sums,
            pure,
        }
    }

    fn push_leaf(&mut self, stats: &NodeStats) -> usize {
        let offset = self.tree.values.len();
        self.tree
            .values
            .extend(stats.sums.iter().map(|s| s / stats.weight));
        self.tree.nodes.push(Node {
            kind: NodeKind::Leaf { value: offset },
            weight: stats.weight,
            impurity: stats.impurity,
        });
        self.tree.nodes.len() - 1
    }

    fn build<R: Rng>(&mut self, root_rows: Vec<usize>, rng: &mut R) {
        // (parent, is_left, rows, depth); parent usize::MAX marks the root.
        let mut stack = vec![(usize::MAX, false, root_rows, 0usize)];
        while let Some((parent, is_left, rows, depth)) = stack.pop() {
            let stats = self.stats(&rows);
            let min_leaf = self.params.min_samples_leaf as f64;
            let can_split = !stats.pure
                && stats.weight >= self.params.min_samples_split as f64
                && stats.weight >= 2.0 * min_leaf
                && self.params.max_depth.map_or(true, |d| depth < d);
            let split = if can_split { self.best_split(&rows, &stats, rng) } else { None };
            let id = match split {
                None => self.push_leaf(&stats),
                Some(c) => {
                    let (left, right): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| self.x.get(i, c.feature) <= c.threshold);
                    self.tree.nodes.push(Node {
                        kind: NodeKind::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left: usize::MAX,
                            right: usize::MAX,
                        },
                        weight: stats.weight,
                        impurity: stats.impurity,
                    });
                    let id = self.tree.nodes.len() - 1;
                    // Right pushed first so the left subtree is numbered first.
                    stack.push((id, false, right, depth + 1));
                    stack.push((id, true, left, depth + 1));
                    id
                }
            };
            if parent != usize::MAX {
                if let NodeKind::Split { left, right, .. } = &mut self.tree.nodes[parent].kind {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
        }
    }

    fn sample_features<R: Rng>(&mut self, rng: &mut R) -> Option<Vec<usize>> {
        let width = self.x.width();
        if self.n_candidates >= width {
            return None;
        }
        let chosen = rand::seq::index::sample(rng, width, self.n_candidates).into_vec();
        for &j in &chosen {
            self.mask[j] = true;
        }
        Some(chosen)
    }

    fn best_split<R: Rng>(&mut self, rows: &[usize], stats: &NodeStats, rng: &mut R) -> Option<Candidate> {
        let sampled = self.sample_features(rng);
        let restrict = sampled.is_some();
        self.entries.clear();
        for &i in rows {
            let (idx, vals) = self.x.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                if !restrict || self.mask[j as usize] {
                    self.entries.push((j, v, i as u32));
                }
            }
        }
        if let Some(chosen) = sampled {
            for j in chosen {
                self.mask[j] = false;
            }
        }
        self.entries
            .sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));

        let entries = std::mem::take(&mut self.entries);
        let mut best: Option<Candidate> = None;
        let mut start = 0;
        while start < entries.len() {
            let feature = entries[start].0;
            let mut stop = start;
            while stop < entries.len() && entries[stop].0 == feature {
                stop += 1;
            }
            self.scan_feature(feature as usize, &entries[start..stop], stats, &mut best);
            start = stop;
        }
        self.entries = entries;
        best
    }

    /// Sweeps thresholds of one feature in ascending value order.
    fn scan_feature(&self, feature: usize, entries: &[(u32, f64, u32)], node: &NodeStats, best: &mut Option<Candidate>) {
        let m = self.y.ncols();
        let min_leaf = self.params.min_samples_leaf as f64;

        let mut nz_weight = 0.0;
        let mut nz_sums = vec![0.0; m];
        for &(_, _, i) in entries {
            let w = self.weights[i as usize] as f64;
            nz_weight += w;
            for (s, v) in nz_sums.iter_mut().zip(self.y.row(i as usize)) {
                *s += w * v;
            }
        }
        let zero_weight = node.weight - nz_weight;

        // Groups of equal value in ascending order, the implicit zero group
        // slotted between negatives and positives.
        let n_neg = entries.partition_point(|e| e.1 < 0.0);
        let mut groups: Vec<(f64, Group)> = Vec::new();
        let push_runs = |from: usize, to: usize, groups: &mut Vec<(f64, Group)>| {
            let mut a = from;
            while a < to {
                let mut b = a;
                while b < to && entries[b].1 == entries[a].1 {
                    b += 1;
                }
                groups.push((entries[a].1, Group::Entries(a, b)));
                a = b;
            }
        };
        push_runs(0, n_neg, &mut groups);
        if zero_weight > 0.0 {
            groups.push((0.0, Group::Zero));
        }
        push_runs(n_neg, entries.len(), &mut groups);
        if groups.len() < 2 {
            return;
        }

        let mut left_weight = 0.0;
        let mut left = vec![0.0; m];
        for g in 0..groups.len() - 1 {
            match groups[g].1 {
                Group::Zero => {
                    left_weight += zero_weight;
                    for k in 0..m {
                        left[k] += node.sums[k] - nz_sums[k];
                    }
                }
                Group::Entries(a, b) => {
                    for &(_, _, i) in &entries[a..b] {
                        let w = self.weights[i as usize] as f64;
                        left_weight += w;
                        for (s, v) in left.iter_mut().zip(self.y.row(i as usize)) {
                            *s += w * v;
                        }
                    }
                }
            }
            let right_weight = node.weight - left_weight;
            if left_weight < min_leaf || right_weight < min_leaf {
                continue;
            }
            let mut score = 0.0;
            for k in 0..m {
                let r = node.sums[k] - left[k];
                score += left[k] * left[k] / left_weight + r * r / right_weight;
            }
            let better = match best {
                None => true,
                Some(b) => score > b.score + 1e-12 * b.score.abs(),
            };
            if better {
                let (lo, hi) = (groups[g].0, groups[g + 1].0);
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                *best = Some(Candidate {
                    feature,
                    threshold,
                    score,
                });
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Group {
    Zero,
    Entries(usize, usize),
}

/// Slot-wise mean of rows with positive weight.
pub fn weighted_column_means(y: ArrayView2<f64>, weights: &[u32]) -> Vec<f64> {
    let mut sums = vec![0.0; y.ncols()];
    let mut total = 0.0;
    for (i, row) in y.rows().into_iter().enumerate() {
        let w = weights[i] as f64;
        total += w;
        for (s, v) in sums.iter_mut().zip(row) {
            *s += w * v;
        }
    }
    sums.iter().map(|s| s / total).collect()
}
