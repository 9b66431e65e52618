//! Stochastic gradient boosting with squared-error loss, one ensemble per output.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, FeatureColumns, GrowParams, Targets, Tree, TreeHyper, TreeNode};
use super::{LossPoint, ModelError};
use crate::seed::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbrHyper {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample: f64,
}

impl GbrHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.max_depth >= 1
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if !ok {
            return Err(ModelError::BadHyper(format!(
                "boosting needs learning_rate and subsample in (0, 1] and max_depth >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub init: f64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub learning_rate: f64,
    /// One ensemble per output dimension.
    pub ensembles: Vec<Ensemble>,
}

/// Rows drawn without replacement for one stage, in ascending order.
fn stage_rows(n: usize, subsample: f64, seed: u64) -> Option<Vec<bool>> {
    if subsample >= 1.0 {
        return None;
    }
    let k = ((subsample * n as f64).floor() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        mask[i] = true;
    }
    Some(mask)
}

#[inline]
fn leaf_by<F: Fn(usize) -> f64>(tree: &Tree, value: F) -> usize {
    let mut i = 0;
    loop {
        match tree.nodes[i] {
            TreeNode::Leaf { leaf } => return leaf,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if value(feature) <= threshold { left } else { right },
        }
    }
}

pub(crate) fn fit_raw(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    h: &GbrHyper,
    seed: u64,
) -> (Boosted, Vec<LossPoint>) {
    let cols = FeatureColumns::new(x);
    let n = cols.n_rows;
    let d = y.ncols();
    let sorted = cols.presort();
    let params = GrowParams {
        hyper: TreeHyper {
            max_leaf_nodes: usize::MAX,
            min_samples_leaf: 1,
            min_samples_split: 2,
        },
        max_depth: Some(h.max_depth),
    };
    // Output-major targets and running scores.
    let y_cols: Vec<Vec<f64>> = y.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut ensembles: Vec<Ensemble> = y_cols
        .iter()
        .map(|c| Ensemble {
            init: c.iter().sum::<f64>() / n as f64,
            trees: Vec::with_capacity(h.n_estimators),
        })
        .collect();
    let mut scores: Vec<Vec<f64>> = ensembles.iter().map(|e| vec![e.init; n]).collect();
    let mut curve = Vec::with_capacity(h.n_estimators);
    for stage in 0..h.n_estimators {
        let mask = stage_rows(n, h.subsample, derive_seed(seed, &[Purpose::Subsample as u64, stage as u64]));
        let lists: Vec<Vec<u32>> = match &mask {
            Some(m) => sorted
                .iter()
                .map(|l| l.iter().copied().filter(|r| m[*r as usize]).collect())
                .collect(),
            None => sorted.clone(),
        };
        ensembles
            .par_iter_mut()
            .zip(scores.par_iter_mut())
            .zip(y_cols.par_iter())
            .for_each(|((ens, f), yc)| {
                let residual: Vec<f64> = yc.iter().zip(f.iter()).map(|(a, b)| a - b).collect();
                let targets = Targets {
                    y: &residual,
                    n_outputs: 1,
                    weights: None,
                };
                let tree = grow(&cols, targets, lists.clone(), params);
                for (r, fr) in f.iter_mut().enumerate() {
                    let leaf = leaf_by(&tree, |feat| cols.col(feat)[r]);
                    *fr += h.learning_rate * tree.leaf_values[leaf];
                }
                ens.trees.push(tree);
            });
        let sse: f64 = scores
            .iter()
            .zip(&y_cols)
            .map(|(f, yc)| f.iter().zip(yc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        curve.push(LossPoint {
            step: stage + 1,
            train: sse / (n * d) as f64,
            validation: None,
        });
    }
    (
        Boosted {
            learning_rate: h.learning_rate,
            ensembles,
        },
        curve,
    )
}

/// Flattened tree arrays used for batch scoring. A negative child index
/// `-(v + 1)` points at leaf value `v`.
struct Flat {
    feature: Vec<u32>,
    threshold: Vec<f64>,
    children: Vec<[i32; 2]>,
    values: Vec<f64>,
    roots: Vec<i32>,
}

impl Flat {
    fn new(trees: &[Tree], scale: f64) -> Self {
        let mut f = Flat {
            feature: Vec::new(),
            threshold: Vec::new(),
            children: Vec::new(),
            values: Vec::new(),
            roots: Vec::with_capacity(trees.len()),
        };
        for t in trees {
            let node_base = f.feature.len() as i32;
            let leaf_base = f.values.len() as i32;
            let map = |i: usize| match t.nodes[i] {
                TreeNode::Leaf { leaf } => -(leaf_base + leaf as i32 + 1),
                TreeNode::Split { .. } => node_base + i as i32,
            };
            for node in &t.nodes {
                match *node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        f.feature.push(feature as u32);
                        f.threshold.push(threshold);
                        f.children.push([map(left), map(right)]);
                    }
                    // Keeps node indices aligned with the source tree.
                    TreeNode::Leaf { .. } => {
                        f.feature.push(0);
                        f.threshold.push(0.0);
                        f.children.push([0, 0]);
                    }
                }
            }
            f.values.extend(t.leaf_values.iter().map(|v| v * scale));
            f.roots.push(map(0));
        }
        f
    }

    #[inline]
    fn eval(&self, root: i32, cols: &FeatureColumns, r: usize) -> f64 {
        let mut i = root;
        while i >= 0 {
            let k = i as usize;
            let go_right = cols.col(self.feature[k] as usize)[r] > self.threshold[k];
            i = self.children[k][go_right as usize];
        }
        self.values[(-i - 1) as usize]
    }
}

/// Trees of depth at most two padded to exactly two levels, scored without
/// branches. A missing split compares against `+inf`, so it always goes left.
struct Shallow {
    features: Vec<[u32; 3]>,
    thresholds: Vec<[f64; 3]>,
    values: Vec<[f64; 4]>,
}

impl Shallow {
    fn new(trees: &[Tree], scale: f64) -> Option<Self> {
        if trees.iter().any(|t| t.depth() > 2) {
            return None;
        }
        let mut s = Shallow {
            features: Vec::with_capacity(trees.len()),
            thresholds: Vec::with_capacity(trees.len()),
            values: Vec::with_capacity(trees.len()),
        };
        // (feature, threshold, left value, right value) of a node at depth one.
        let lower = |t: &Tree, i: usize| match t.nodes[i] {
            TreeNode::Leaf { leaf } => (0, f64::INFINITY, t.leaf_values[leaf], t.leaf_values[leaf]),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let v = |j: usize| match t.nodes[j] {
                    TreeNode::Leaf { leaf } => t.leaf_values[leaf],
                    TreeNode::Split { .. } => unreachable!("depth checked above"),
                };
                (feature as u32, threshold, v(left), v(right))
            }
        };
        for t in trees {
            let (f, th, vals) = match t.nodes[0] {
                TreeNode::Leaf { leaf } => {
                    let v = t.leaf_values[leaf];
                    ([0; 3], [f64::INFINITY; 3], [v; 4])
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let l = lower(t, left);
                    let r = lower(t, right);
                    ([feature as u32, l.0, r.0], [threshold, l.1, r.1], [l.2, l.3, r.2, r.3])
                }
            };
            s.features.push(f);
            s.thresholds.push(th);
            s.values.push(vals.map(|v| v * scale));
        }
        Some(s)
    }

    fn add_block(&self, cols: &FeatureColumns, start: usize, acc: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { self.add_block_avx2(cols, start, acc) };
        }
        self.add_block_portable(cols, start, acc)
    }

    /// Same loop compiled with wider vectors.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn add_block_avx2(&self, cols: &FeatureColumns, start: usize, acc: &mut [f64]) {
        self.add_block_portable(cols, start, acc)
    }

    #[inline(always)]
    fn add_block_portable(&self, cols: &FeatureColumns, start: usize, acc: &mut [f64]) {
        const GROUP: usize = 4;
        let end = start + acc.len();
        let n = acc.len();
        let column = |f: u32| &cols.col(f as usize)[start..end];
        let trees = self.features.len();
        let whole = trees - trees % GROUP;
        // Trees are added one after another per row, so grouping them keeps the
        // summation order of a plain tree-by-tree pass.
        for g in (0..whole).step_by(GROUP) {
            let c: [[&[f64]; 3]; GROUP] = std::array::from_fn(|k| self.features[g + k].map(column));
            let t: [[f64; 3]; GROUP] = std::array::from_fn(|k| self.thresholds[g + k]);
            let v: [[f64; 4]; GROUP] = std::array::from_fn(|k| self.values[g + k]);
            for i in 0..n {
                let mut a = acc[i];
                for k in 0..GROUP {
                    a += shallow_value(c[k][0][i], c[k][1][i], c[k][2][i], &t[k], &v[k]);
                }
                acc[i] = a;
            }
        }
        for k in whole..trees {
            let [c0, c1, c2] = self.features[k].map(column);
            let (t, v) = (&self.thresholds[k], &self.values[k]);
            for i in 0..n {
                acc[i] += shallow_value(c0[i], c1[i], c2[i], t, v);
            }
        }
    }
}

#[inline(always)]
fn shallow_value(x0: f64, x1: f64, x2: f64, t: &[f64; 3], v: &[f64; 4]) -> f64 {
    let l = if x1 > t[1] { v[1] } else { v[0] };
    let r = if x2 > t[2] { v[3] } else { v[2] };
    if x0 > t[0] {
        r
    } else {
        l
    }
}

impl Boosted {
    pub fn n_outputs(&self) -> usize {
        self.ensembles.len()
    }

    /// Trees are visited inside row blocks so each block's feature values stay
    /// in cache while every stage is scored.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        const BLOCK: usize = 512;
        let cols = FeatureColumns::new(x);
        let n = cols.n_rows;
        let d = self.n_outputs();
        let mut out_t = vec![0.0; d * n];
        for (k, ens) in self.ensembles.iter().enumerate() {
            let shallow = Shallow::new(&ens.trees, self.learning_rate);
            let flat = shallow.is_none().then(|| Flat::new(&ens.trees, self.learning_rate));
            for start in (0..n).step_by(BLOCK) {
                let end = (start + BLOCK).min(n);
                let acc = &mut out_t[k * n + start..k * n + end];
                acc.iter_mut().for_each(|a| *a = ens.init);
                match (&shallow, &flat) {
                    (Some(s), _) => s.add_block(&cols, start, acc),
                    (None, Some(flat)) => {
                        for &root in &flat.roots {
                            for (a, r) in acc.iter_mut().zip(start..end) {
                                *a += flat.eval(root, &cols, r);
                            }
                        }
                    }
                    (None, None) => unreachable!(),
                }
            }
        }
        Array2::from_shape_fn((n, d), |(r, k)| out_t[k * n + r])
    }
}
