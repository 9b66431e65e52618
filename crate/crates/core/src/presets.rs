//! Named grid presets: global perturbation range and tuned model settings.

use crate::grid::{parse_case, GridCase, ParseError};
use crate::models::{ForestHyper, GbrHyper, MlpHyper, ModelHyper, ModelSpec, TreeHyper};
use crate::scenario::PerturbationSpec;

/// The 30-bus test system, shipped with the crate.
pub const CASE30: &str = include_str!("../data/case30.m");

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Global perturbation range in percent.
    pub range: (f64, f64),
    pub dtr: TreeHyper,
    pub rfr: ForestHyper,
    pub gbr: GbrHyper,
    pub nn1: MlpHyper,
    pub nn2: MlpHyper,
}

const fn tree(max_leaf_nodes: usize, min_samples_leaf: usize, min_samples_split: usize) -> TreeHyper {
    TreeHyper {
        max_leaf_nodes,
        min_samples_leaf,
        min_samples_split,
    }
}

const fn forest(
    max_leaf_nodes: usize,
    min_samples_leaf: usize,
    min_samples_split: usize,
    n_estimators: usize,
) -> ForestHyper {
    ForestHyper {
        max_leaf_nodes,
        min_samples_leaf,
        min_samples_split,
        n_estimators,
        bootstrap: true,
    }
}

const fn gbr(learning_rate: f64, max_depth: usize, n_estimators: usize, subsample: f64) -> GbrHyper {
    GbrHyper {
        learning_rate,
        max_depth,
        n_estimators,
        subsample,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["case30", "case240", "case1354", "case1888"];

pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "case30" => Preset {
            name: "case30",
            range: (-30.0, 30.0),
            dtr: tree(110, 130, 120),
            rfr: forest(100, 100, 140, 100),
            gbr: gbr(0.09, 2, 1500, 0.2),
            nn1: MlpHyper::new(vec![128], 0.009, 128),
            nn2: MlpHyper::new(vec![512, 32], 0.008, 32),
        },
        "case240" => Preset {
            name: "case240",
            range: (-70.0, -10.0),
            dtr: tree(60, 190, 170),
            rfr: forest(170, 180, 180, 700),
            gbr: gbr(0.09, 2, 1600, 0.1),
            nn1: MlpHyper::new(vec![128, 64], 0.006, 128),
            nn2: MlpHyper::new(vec![128, 32, 32], 0.005, 128),
        },
        "case1354" => Preset {
            name: "case1354",
            range: (-50.0, 0.0),
            dtr: tree(60, 190, 170),
            rfr: forest(30, 190, 70, 300),
            gbr: gbr(0.01, 4, 200, 0.1),
            nn1: MlpHyper::new(vec![128, 64], 0.004, 128),
            nn2: MlpHyper::new(vec![128, 32, 16], 0.005, 128),
        },
        "case1888" => Preset {
            name: "case1888",
            range: (-40.0, 10.0),
            dtr: tree(110, 130, 120),
            rfr: forest(60, 190, 170, 1200),
            gbr: gbr(0.08, 2, 1800, 0.1),
            nn1: MlpHyper::new(vec![4096, 512, 32], 0.001, 128),
            nn2: MlpHyper::new(vec![4096, 2048, 512, 32], 0.001, 128),
        },
        _ => return None,
    };
    Some(p)
}

impl Preset {
    pub fn perturbation(&self) -> PerturbationSpec {
        PerturbationSpec::new(self.range.0, self.range.1)
    }

    /// All five model configurations, labelled as in the result tables.
    pub fn models(&self) -> Vec<ModelSpec> {
        vec![
            ModelSpec::new("DTR", ModelHyper::Dtr(self.dtr)),
            ModelSpec::new("RFR", ModelHyper::Rfr(self.rfr)),
            ModelSpec::new("GBR", ModelHyper::Gbr(self.gbr)),
            ModelSpec::new("NN-1", ModelHyper::Mlp(self.nn1.clone())),
            ModelSpec::new("NN-2", ModelHyper::Mlp(self.nn2.clone())),
        ]
    }

    pub fn model(&self, label: &str) -> Option<ModelSpec> {
        self.models().into_iter().find(|m| m.label.eq_ignore_ascii_case(label))
    }
}

/// Parses the bundled 30-bus case.
pub fn case30() -> Result<GridCase, ParseError> {
    parse_case(CASE30)
}
