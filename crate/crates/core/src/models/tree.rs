//! Multi-output CART regression trees grown best-first.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeHyper {
    pub max_leaf_nodes: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl TreeHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_leaf_nodes < 1 || self.min_samples_leaf < 1 || self.min_samples_split < 2 {
            return Err(ModelError::BadHyper(format!(
                "tree needs max_leaf_nodes >= 1, min_samples_leaf >= 1, min_samples_split >= 2; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GrowParams {
    pub hyper: TreeHyper,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { leaf: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_outputs: usize,
    /// Leaf mean vectors, `n_leaves × n_outputs` row-major.
    pub leaf_values: Vec<f64>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.leaf_values.len() / self.n_outputs
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    #[inline]
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { leaf } => return leaf,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_value(&self, leaf: usize) -> &[f64] {
        &self.leaf_values[leaf * self.n_outputs..(leaf + 1) * self.n_outputs]
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        self.leaf_value(self.leaf_index(row))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let x = x.as_standard_layout();
        let mut out = Array2::zeros((x.nrows(), self.n_outputs));
        for (xr, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            let v = self.predict_row(xr.as_slice().expect("standard layout"));
            o.iter_mut().zip(v).for_each(|(a, b)| *a = *b);
        }
        out
    }
}

/// Feature-major copy of a design matrix, so each column scan is contiguous.
#[derive(Debug, Clone)]
pub(crate) struct FeatureColumns {
    pub n_rows: usize,
    pub n_features: usize,
    data: Vec<f64>,
}

impl FeatureColumns {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let (n_rows, n_features) = x.dim();
        let mut data = Vec::with_capacity(n_rows * n_features);
        for col in x.columns() {
            data.extend(col.iter().copied());
        }
        Self {
            n_rows,
            n_features,
            data,
        }
    }

    #[inline]
    pub fn col(&self, f: usize) -> &[f64] {
        &self.data[f * self.n_rows..(f + 1) * self.n_rows]
    }

    /// Row indices sorted by each feature value, ties by row index.
    pub fn presort(&self) -> Vec<Vec<u32>> {
        (0..self.n_features)
            .map(|f| {
                let c = self.col(f);
                let mut idx: Vec<u32> = (0..self.n_rows as u32).collect();
                idx.sort_by(|a, b| c[*a as usize].total_cmp(&c[*b as usize]));
                idx
            })
            .collect()
    }
}

/// Row-major targets with optional integer multiplicities (bootstrap counts).
#[derive(Clone, Copy)]
pub(crate) struct Targets<'a> {
    pub y: &'a [f64],
    pub n_outputs: usize,
    pub weights: Option<&'a [u32]>,
}

impl Targets<'_> {
    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.y[r * self.n_outputs..(r + 1) * self.n_outputs]
    }

    #[inline]
    fn weight(&self, r: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[r] as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Queued {
    gain: f64,
    seq: usize,
    node: usize,
    cand: Candidate,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Larger gain first, then earlier-created node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Grower<'a> {
    cols: &'a FeatureColumns,
    targets: Targets<'a>,
    params: GrowParams,
    lists: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    sums: Vec<f64>,
    left: Vec<f64>,
}

impl Grower<'_> {
    fn node_stats(&mut self, start: usize, end: usize) -> (f64, bool) {
        let d = self.targets.n_outputs;
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        let list = &self.lists[0][start..end];
        let first = self.targets.row(list[0] as usize);
        let mut weight = 0.0;
        let mut uniform = true;
        for &r in list {
            let r = r as usize;
            let w = self.targets.weight(r);
            let yr = self.targets.row(r);
            for k in 0..d {
                self.sums[k] += w * yr[k];
            }
            uniform &= yr == first;
            weight += w;
        }
        (weight, uniform)
    }

    fn best_split(&mut self, start: usize, end: usize, depth: usize) -> Option<Candidate> {
        let h = self.params.hyper;
        if self.params.max_depth.is_some_and(|m| depth >= m) {
            return None;
        }
        let (total, uniform) = self.node_stats(start, end);
        let min_leaf = h.min_samples_leaf as f64;
        if uniform || total < h.min_samples_split as f64 || total < 2.0 * min_leaf {
            return None;
        }
        let d = self.targets.n_outputs;
        let parent: f64 = self.sums.iter().map(|s| s * s).sum::<f64>() / total;
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.cols.n_features {
            let col = self.cols.col(f);
            let list = &self.lists[f][start..end];
            let found = if d == 1 && self.targets.weights.is_none() {
                scan_single(col, list, self.targets.y, total, self.sums[0], min_leaf)
            } else {
                scan_general(self.targets, &self.sums, &mut self.left, col, list, total, min_leaf)
            };
            if let Some((score, pos)) = found {
                if best.is_none_or(|(s, _, _)| score > s) {
                    let v = col[list[pos - 1] as usize];
                    let next = col[list[pos] as usize];
                    let mut t = v + (next - v) * 0.5;
                    if t >= next {
                        t = v;
                    }
                    best = Some((score, f, t));
                }
            }
        }
        best.map(|(score, feature, threshold)| Candidate {
            feature,
            threshold,
            gain: score - parent,
        })
        .filter(|c| c.gain > 0.0)
    }

    /// Stable partition of the sorted lists; returns the left child size.
    /// Only the first list is needed for children that will never be split.
    fn partition(&mut self, start: usize, end: usize, cand: Candidate, all: bool) -> usize {
        let col = self.cols.col(cand.feature);
        for &r in &self.lists[cand.feature][start..end] {
            self.go_left[r as usize] = col[r as usize] <= cand.threshold;
        }
        let mut n_left = 0;
        let n_lists = if all { self.lists.len() } else { 1 };
        for list in &mut self.lists[..n_lists] {
            let seg = &mut list[start..end];
            self.scratch.clear();
            let mut w = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if self.go_left[r as usize] {
                    seg[w] = r;
                    w += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
            n_left = w;
        }
        n_left
    }

    fn leaf_mean(&self, start: usize, end: usize, out: &mut Vec<f64>) {
        let d = self.targets.n_outputs;
        let mut rows: Vec<u32> = self.lists[0][start..end].to_vec();
        rows.sort_unstable();
        let mut acc = vec![0.0; d];
        let mut weight = 0.0;
        for r in rows {
            let r = r as usize;
            let w = self.targets.weight(r);
            for (a, y) in acc.iter_mut().zip(self.targets.row(r)) {
                *a += w * y;
            }
            weight += w;
        }
        out.extend(acc.into_iter().map(|a| a / weight));
    }
}

/// Best `(score, left size)` for one feature, any output width and weights.
fn scan_general(
    targets: Targets<'_>,
    sums: &[f64],
    left: &mut [f64],
    col: &[f64],
    list: &[u32],
    total: f64,
    min_leaf: f64,
) -> Option<(f64, usize)> {
    let d = targets.n_outputs;
    left.iter_mut().for_each(|s| *s = 0.0);
    let mut wl = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for i in 0..list.len() - 1 {
        let r = list[i] as usize;
        let w = targets.weight(r);
        let yr = targets.row(r);
        for k in 0..d {
            left[k] += w * yr[k];
        }
        wl += w;
        let wr = total - wl;
        if wr < min_leaf {
            break;
        }
        if wl < min_leaf || col[r] == col[list[i + 1] as usize] {
            continue;
        }
        // sum_k sl²/wl + sr²/wr, with a single division.
        let mut num = 0.0;
        for k in 0..d {
            let sl = left[k];
            let sr = sums[k] - sl;
            num += sl * sl * wr + sr * sr * wl;
        }
        let score = num / (wl * wr);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i + 1));
        }
    }
    best
}

/// Single-output, unit-weight specialization of `scan_general`.
fn scan_single(col: &[f64], list: &[u32], y: &[f64], total: f64, sum: f64, min_leaf: f64) -> Option<(f64, usize)> {
    let mut sl = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut pos = 0;
    let lo = (min_leaf as usize).max(1);
    let hi = (total - min_leaf) as usize;
    let mut v = col[list[0] as usize];
    for i in 0..hi.min(list.len() - 1) {
        let r = list[i] as usize;
        sl += y[r];
        let next = col[list[i + 1] as usize];
        let distinct = v != next;
        v = next;
        if i + 1 < lo || !distinct {
            continue;
        }
        let wl = (i + 1) as f64;
        let wr = total - wl;
        let sr = sum - sl;
        let score = (sl * sl * wr + sr * sr * wl) / (wl * wr);
        if score > best {
            best = score;
            pos = i + 1;
        }
    }
    (pos > 0).then_some((best, pos))
}

/// Grows one tree. `lists` holds, per feature, the participating rows sorted by
/// that feature (rows with zero weight must already be excluded).
pub(crate) fn grow(cols: &FeatureColumns, targets: Targets<'_>, lists: Vec<Vec<u32>>, params: GrowParams) -> Tree {
    let d = targets.n_outputs;
    let m = lists.first().map_or(0, Vec::len);
    assert!(m > 0, "tree needs at least one row");
    let mut g = Grower {
        cols,
        targets,
        params,
        lists,
        go_left: vec![false; cols.n_rows],
        scratch: Vec::with_capacity(m),
        sums: vec![0.0; d],
        left: vec![0.0; d],
    };
    // Per node: row range and depth; leaves keep `TreeNode::Leaf` with a placeholder.
    let mut nodes = vec![TreeNode::Leaf { leaf: 0 }];
    let mut ranges = vec![(0usize, m, 0usize)];
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    if let Some(cand) = g.best_split(0, m, 0) {
        heap.push(Queued {
            gain: cand.gain,
            seq,
            node: 0,
            cand,
        });
    }
    let mut n_leaves = 1;
    while n_leaves < params.hyper.max_leaf_nodes {
        let Some(q) = heap.pop() else { break };
        let (start, end, depth) = ranges[q.node];
        let terminal = params.max_depth.is_some_and(|m| depth + 1 >= m);
        let k = g.partition(start, end, q.cand, !terminal);
        let left = nodes.len();
        nodes.push(TreeNode::Leaf { leaf: 0 });
        nodes.push(TreeNode::Leaf { leaf: 0 });
        ranges.push((start, start + k, depth + 1));
        ranges.push((start + k, end, depth + 1));
        nodes[q.node] = TreeNode::Split {
            feature: q.cand.feature,
            threshold: q.cand.threshold,
            left,
            right: left + 1,
        };
        n_leaves += 1;
        for child in [left, left + 1] {
            let (s, e, dep) = ranges[child];
            if let Some(cand) = g.best_split(s, e, dep) {
                seq += 1;
                heap.push(Queued {
                    gain: cand.gain,
                    seq,
                    node: child,
                    cand,
                });
            }
        }
    }
    let mut leaf_values = Vec::with_capacity(n_leaves * d);
    let mut next_leaf = 0;
    for (i, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { leaf } = node {
            *leaf = next_leaf;
            next_leaf += 1;
            let (s, e, _) = ranges[i];
            g.leaf_mean(s, e, &mut leaf_values);
        }
    }
    Tree {
        nodes,
        n_outputs: d,
        leaf_values,
    }
}

/// Fits a tree on already-transformed features.
pub(crate) fn fit_raw(x: ArrayView2<f64>, y: ArrayView2<f64>, params: GrowParams) -> Tree {
    let cols = FeatureColumns::new(x);
    let y = y.as_standard_layout();
    let targets = Targets {
        y: y.as_slice().expect("standard layout"),
        n_outputs: y.ncols(),
        weights: None,
    };
    grow(&cols, targets, cols.presort(), params)
}
