//! Bagged regression trees.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, FeatureColumns, GrowParams, Targets, Tree, TreeHyper};
use super::ModelError;
use crate::seed::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestHyper {
    pub max_leaf_nodes: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub n_estimators: usize,
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl ForestHyper {
    pub fn tree(&self) -> TreeHyper {
        TreeHyper {
            max_leaf_nodes: self.max_leaf_nodes,
            min_samples_leaf: self.min_samples_leaf,
            min_samples_split: self.min_samples_split,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.tree().validate()?;
        if self.n_estimators == 0 {
            return Err(ModelError::BadHyper("forest needs n_estimators >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

/// Bootstrap multiplicities: `n` draws with replacement from `n` rows.
pub(crate) fn bootstrap_counts(n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

pub(crate) fn fit_raw(x: ArrayView2<f64>, y: ArrayView2<f64>, h: &ForestHyper, seed: u64) -> Forest {
    let cols = FeatureColumns::new(x);
    let y = y.as_standard_layout();
    let y = y.as_slice().expect("standard layout");
    let d = y.len() / cols.n_rows;
    let sorted = cols.presort();
    let params = GrowParams {
        hyper: h.tree(),
        max_depth: None,
    };
    let trees = (0..h.n_estimators)
        .into_par_iter()
        .map(|t| {
            if h.bootstrap {
                let counts = bootstrap_counts(cols.n_rows, derive_seed(seed, &[Purpose::Bootstrap as u64, t as u64]));
                let lists = sorted
                    .iter()
                    .map(|l| l.iter().copied().filter(|r| counts[*r as usize] > 0).collect())
                    .collect();
                let targets = Targets {
                    y,
                    n_outputs: d,
                    weights: Some(&counts),
                };
                grow(&cols, targets, lists, params)
            } else {
                let targets = Targets {
                    y,
                    n_outputs: d,
                    weights: None,
                };
                grow(&cols, targets, sorted.clone(), params)
            }
        })
        .collect();
    Forest { trees }
}

impl Forest {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let x = x.as_standard_layout();
        let d = self.trees[0].n_outputs;
        let mut out = Array2::zeros((x.nrows(), d));
        let k = self.trees.len() as f64;
        for (xr, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            let xr = xr.as_slice().expect("standard layout");
            let o = o.as_slice_mut().expect("fresh array");
            for t in &self.trees {
                for (a, b) in o.iter_mut().zip(t.predict_row(xr)) {
                    *a += b;
                }
            }
            o.iter_mut().for_each(|a| *a /= k);
        }
        out
    }
}
