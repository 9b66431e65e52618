//! Surrogate regressors mapping per-bus features to nodal prices.

pub mod forest;
pub mod gbr;
pub mod mlp;
pub mod scaler;
pub mod tree;

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use forest::{Forest, ForestHyper};
pub use gbr::{Boosted, Ensemble, GbrHyper};
pub use mlp::{Layer, Mlp, MlpHyper};
pub use scaler::ScalerParams;
pub use tree::{Tree, TreeHyper, TreeNode};

pub const MODEL_FORMAT: &str = "lmpbench-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training recipe recorded with every network so runs can be reproduced.
pub const MLP_RECIPE: &str = "relu hidden, linear output, mse on standardized targets, adam(0.9,0.999,1e-8), \
     uniform(+-1/sqrt(fan_in)) init, best-validation weights";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty training data")]
    Empty,
    #[error("shape mismatch: X has {x_rows} rows, Y has {y_rows}")]
    ShapeMismatch { x_rows: usize, y_rows: usize },
    #[error("expected {expected} feature columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("unsupported model format version {found} (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Dtr,
    Rfr,
    Gbr,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dtr => "DTR",
            ModelKind::Rfr => "RFR",
            ModelKind::Gbr => "GBR",
            ModelKind::Mlp => "MLP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelHyper {
    Dtr(TreeHyper),
    Rfr(ForestHyper),
    Gbr(GbrHyper),
    Mlp(MlpHyper),
}

impl ModelHyper {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelHyper::Dtr(_) => ModelKind::Dtr,
            ModelHyper::Rfr(_) => ModelKind::Rfr,
            ModelHyper::Gbr(_) => ModelKind::Gbr,
            ModelHyper::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelHyper::Dtr(h) => h.validate(),
            ModelHyper::Rfr(h) => h.validate(),
            ModelHyper::Gbr(h) => h.validate(),
            ModelHyper::Mlp(h) => h.validate(),
        }
    }
}

/// A named model configuration, e.g. `NN-1` with its topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub label: String,
    pub hyper: ModelHyper,
}

impl ModelSpec {
    pub fn new(label: impl Into<String>, hyper: ModelHyper) -> Self {
        Self {
            label: label.into(),
            hyper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Epoch or boosting stage, starting at 1.
    pub step: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Dtr(Tree),
    Rfr(Forest),
    Gbr(Boosted),
    Mlp {
        network: Mlp<f64>,
        target_scaler: ScalerParams<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub n_rows: usize,
    pub loss_curve: Vec<LossPoint>,
    pub recipe: Option<String>,
    pub training_data_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub seed: u64,
    pub n_features: usize,
    pub n_outputs: usize,
    pub scaler: ScalerParams<f64>,
    pub params: ModelParams,
    pub metadata: TrainingMetadata,
}

fn check_training(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(), ModelError> {
    if x.nrows() != y.nrows() {
        return Err(ModelError::ShapeMismatch {
            x_rows: x.nrows(),
            y_rows: y.nrows(),
        });
    }
    if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(ModelError::Empty);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok(())
}

/// Fits the model described by `spec` on raw (unscaled) features.
pub fn fit(spec: &ModelSpec, x: ArrayView2<f64>, y: ArrayView2<f64>, seed: u64) -> Result<TrainedModel, ModelError> {
    check_training(x, y)?;
    spec.hyper.validate()?;
    let scaler = ScalerParams::fit(x)?;
    let z = scaler.transform(x)?;
    let mut curve = Vec::new();
    let mut recipe = None;
    let params = match &spec.hyper {
        ModelHyper::Dtr(h) => ModelParams::Dtr(tree::fit_raw(
            z.view(),
            y,
            tree::GrowParams {
                hyper: *h,
                max_depth: None,
            },
        )),
        ModelHyper::Rfr(h) => ModelParams::Rfr(forest::fit_raw(z.view(), y, h, seed)),
        ModelHyper::Gbr(h) => {
            let (b, c) = gbr::fit_raw(z.view(), y, h, seed);
            curve = c;
            ModelParams::Gbr(b)
        }
        ModelHyper::Mlp(h) => {
            let target_scaler = ScalerParams::fit(y)?;
            let ys = target_scaler.transform(y)?;
            let (network, c) = mlp::train(z.view(), ys.view(), h, seed)?;
            curve = c;
            recipe = Some(MLP_RECIPE.to_string());
            ModelParams::Mlp { network, target_scaler }
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        seed,
        n_features: x.ncols(),
        n_outputs: y.ncols(),
        scaler,
        params,
        metadata: TrainingMetadata {
            n_rows: x.nrows(),
            loss_curve: curve,
            recipe,
            training_data_hash: None,
        },
    })
}

pub fn fit_tree(x: ArrayView2<f64>, y: ArrayView2<f64>, h: TreeHyper, seed: u64) -> Result<TrainedModel, ModelError> {
    fit(&ModelSpec::new("DTR", ModelHyper::Dtr(h)), x, y, seed)
}

pub fn fit_forest(x: ArrayView2<f64>, y: ArrayView2<f64>, h: ForestHyper, seed: u64) -> Result<TrainedModel, ModelError> {
    fit(&ModelSpec::new("RFR", ModelHyper::Rfr(h)), x, y, seed)
}

pub fn fit_gbr(x: ArrayView2<f64>, y: ArrayView2<f64>, h: GbrHyper, seed: u64) -> Result<TrainedModel, ModelError> {
    fit(&ModelSpec::new("GBR", ModelHyper::Gbr(h)), x, y, seed)
}

pub fn fit_mlp(x: ArrayView2<f64>, y: ArrayView2<f64>, h: MlpHyper, seed: u64) -> Result<TrainedModel, ModelError> {
    fit(&ModelSpec::new("MLP", ModelHyper::Mlp(h)), x, y, seed)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.hyper.kind()
    }

    pub fn label(&self) -> &str {
        &self.spec.label
    }

    /// Predicts from raw features; the stored scaler is applied first.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        let z = self.scaler.transform(x)?;
        Ok(match &self.params {
            ModelParams::Dtr(t) => t.predict(z.view()),
            ModelParams::Rfr(f) => f.predict(z.view()),
            ModelParams::Gbr(b) => b.predict(z.view()),
            ModelParams::Mlp { network, target_scaler } => {
                let out = mlp::forward_blocked(network, z.view(), 4096);
                target_scaler.inverse_transform(out.view())?
            }
        })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'a str,
            version: u32,
            model: &'a TrainedModel,
        }
        serde_json::to_string(&Out {
            format: MODEL_FORMAT,
            version: MODEL_FORMAT_VERSION,
            model: self,
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        #[derive(Deserialize)]
        struct In {
            model: TrainedModel,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(ModelError::Corrupt(format!("unknown container format `{}`", header.format)));
        }
        if header.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version { found: header.version });
        }
        let model = serde_json::from_str::<In>(text)
            .map_err(|e| ModelError::Corrupt(e.to_string()))?
            .model;
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<(), ModelError> {
        let outputs = match &self.params {
            ModelParams::Dtr(t) => t.n_outputs,
            ModelParams::Rfr(f) => f.trees.first().map_or(0, |t| t.n_outputs),
            ModelParams::Gbr(b) => b.n_outputs(),
            ModelParams::Mlp { network, .. } => network.n_outputs(),
        };
        if self.scaler.dim() != self.n_features || outputs != self.n_outputs {
            return Err(ModelError::Corrupt("stored dimensions disagree with parameters".into()));
        }
        Ok(())
    }

    pub fn manifest_entry(&self, file: &str) -> ManifestEntry {
        ManifestEntry {
            label: self.spec.label.clone(),
            kind: self.kind(),
            hyper: self.spec.hyper.clone(),
            seed: self.seed,
            training_data_hash: self.metadata.training_data_hash.clone(),
            file: file.to_string(),
        }
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model.to_json()).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TrainedModel::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub kind: ModelKind,
    pub hyper: ModelHyper,
    pub seed: u64,
    pub training_data_hash: Option<String>,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub models: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn data() -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((60, 3), |(i, j)| ((i * (j + 2) * 7) % 23) as f64 + j as f64 * 100.0);
        let y = Array2::from_shape_fn((60, 2), |(i, k)| x[[i, 0]] * (k as f64 + 1.0) - 0.5 * x[[i, 1]] + 80.0);
        (x, y)
    }

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::new(
                "DTR",
                ModelHyper::Dtr(TreeHyper {
                    max_leaf_nodes: 8,
                    min_samples_leaf: 2,
                    min_samples_split: 4,
                }),
            ),
            ModelSpec::new(
                "RFR",
                ModelHyper::Rfr(ForestHyper {
                    max_leaf_nodes: 8,
                    min_samples_leaf: 2,
                    min_samples_split: 4,
                    n_estimators: 5,
                    bootstrap: true,
                }),
            ),
            ModelSpec::new(
                "GBR",
                ModelHyper::Gbr(GbrHyper {
                    learning_rate: 0.1,
                    max_depth: 2,
                    n_estimators: 20,
                    subsample: 0.5,
                }),
            ),
            ModelSpec::new("NN", ModelHyper::Mlp(MlpHyper::new(vec![6], 0.01, 16))),
        ]
    }

    #[test]
    fn save_load_preserves_predictions_bit_exactly() {
        let (x, y) = data();
        let dir = tempfile::tempdir().unwrap();
        for spec in specs() {
            let m = fit(&spec, x.view(), y.view(), 5).unwrap();
            let path = dir.path().join(format!("{}.json", spec.label));
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(x.view()).unwrap(), m.predict(x.view()).unwrap());
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let (x, y) = data();
        let m = fit(&specs()[0], x.view(), y.view(), 1).unwrap();
        let text = m.to_json();
        assert!(matches!(
            TrainedModel::from_json(&text[..text.len() / 2]),
            Err(ModelError::Corrupt(_))
        ));
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(TrainedModel::from_json(&bumped), Err(ModelError::Version { found: 99 })));
    }

    #[test]
    fn column_count_is_enforced() {
        let (x, y) = data();
        let m = fit(&specs()[0], x.view(), y.view(), 1).unwrap();
        let back = TrainedModel::from_json(&m.to_json()).unwrap();
        let narrow = x.slice(ndarray::s![.., ..2]).to_owned();
        assert!(matches!(
            back.predict(narrow.view()),
            Err(ModelError::ColumnMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = array![[1.0], [2.0]];
        let y = array![[1.0]];
        assert!(matches!(
            fit(&specs()[0], x.view(), y.view(), 0),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn fits_are_deterministic() {
        let (x, y) = data();
        for spec in specs() {
            let a = fit(&spec, x.view(), y.view(), 17).unwrap();
            let b = fit(&spec, x.view(), y.view(), 17).unwrap();
            assert_eq!(a, b, "{}", spec.label);
        }
    }

    #[test]
    fn hyper_config_round_trips() {
        for spec in specs() {
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
        }
        let bad = r#"{"label":"x","hyper":{"kind":"dtr","max_leaf_nodes":2,"min_samples_leaf":1,"min_samples_split":2,"oops":1}}"#;
        assert!(serde_json::from_str::<ModelSpec>(bad).is_err());
    }
}
