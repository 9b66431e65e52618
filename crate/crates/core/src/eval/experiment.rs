use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mape, EvalError};
use crate::dataset::Dataset;
use crate::grid::GridCase;
use crate::models::{fit, ModelKind, ModelSpec, TrainedModel};
use crate::scenario::{generate_dataset, ScenarioConfig, TestCase};
use crate::seed::{derive_seed, Purpose};

/// Seed for repeat `r` of an experiment rooted at `base`.
pub fn repeat_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, &[Purpose::Repeat as u64, r as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStats {
    pub test_case: TestCase,
    pub test_rows: usize,
    pub mean_mape: f64,
    /// Sample standard deviation over repeats, 0 for a single repeat.
    pub std_mape: f64,
    pub per_repeat: Vec<f64>,
}

impl CaseStats {
    fn from_values(test_case: TestCase, test_rows: usize, per_repeat: Vec<f64>) -> Self {
        let (mean_mape, std_mape) = mean_std(&per_repeat);
        Self {
            test_case,
            test_rows,
            mean_mape,
            std_mape,
            per_repeat,
        }
    }
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub seeds: Vec<u64>,
    pub by_test_case: Vec<CaseStats>,
}

impl ModelReport {
    pub fn case(&self, tc: TestCase) -> Option<&CaseStats> {
        self.by_test_case.iter().find(|c| c.test_case == tc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub grid_name: String,
    pub grid_hash: String,
    pub train_rows: usize,
    pub train_dataset_hash: String,
    pub test_dataset_hashes: Vec<(TestCase, String)>,
    pub base_seed: u64,
    pub repeats: usize,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    pub fn model(&self, label: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (model, test case).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "kind", "test_case", "repeats", "test_rows", "mean_mape", "std_mape"])
            .expect("in-memory write");
        for m in &self.models {
            for c in &m.by_test_case {
                w.write_record([
                    m.label.clone(),
                    m.kind.to_string(),
                    c.test_case.id().to_string(),
                    c.per_repeat.len().to_string(),
                    c.test_rows.to_string(),
                    c.mean_mape.to_string(),
                    c.std_mape.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Grid label against MAPE, one series per model and test case.
    pub fn plot_data(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["grid", "model", "test_case", "mape_percent", "std_percent"])
            .expect("in-memory write");
        for m in &self.models {
            for c in &m.by_test_case {
                w.write_record([
                    self.grid_name.clone(),
                    m.label.clone(),
                    c.test_case.id().to_string(),
                    c.mean_mape.to_string(),
                    c.std_mape.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Fits every model `repeats` times on `train` and scores each fit on every
/// test set. Repeats differ only in the model seed.
pub fn evaluate_models(
    train: &Dataset,
    tests: &[Dataset],
    specs: &[ModelSpec],
    repeats: usize,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    if repeats == 0 {
        return Err(EvalError::BadExperiment("repeats must be at least 1".into()));
    }
    if specs.is_empty() || tests.is_empty() {
        return Err(EvalError::BadExperiment("need at least one model and one test set".into()));
    }
    for t in tests {
        if t.metadata.grid_hash != train.metadata.grid_hash {
            return Err(EvalError::BadExperiment("test sets must share the training grid".into()));
        }
    }
    let train_hash = train.content_hash();
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|m| (0..repeats).map(move |r| (m, r)))
        .collect();
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let mut model = fit(&specs[m], train.features.view(), train.targets.view(), repeat_seed(base_seed, r))?;
            model.metadata.training_data_hash = Some(train_hash.clone());
            tests
                .iter()
                .map(|t| {
                    let pred: Array2<f64> = model.predict(t.features.view())?;
                    mape(t.targets.view(), pred.view())
                })
                .collect::<Result<Vec<f64>, EvalError>>()
        })
        .collect::<Result<_, _>>()?;
    let models = specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let by_test_case = tests
                .iter()
                .enumerate()
                .map(|(ti, t)| {
                    let per_repeat = (0..repeats).map(|r| scores[m * repeats + r][ti]).collect();
                    CaseStats::from_values(t.metadata.config.test_case, t.len(), per_repeat)
                })
                .collect();
            ModelReport {
                label: spec.label.clone(),
                kind: spec.hyper.kind(),
                spec: spec.clone(),
                seeds: (0..repeats).map(|r| repeat_seed(base_seed, r)).collect(),
                by_test_case,
            }
        })
        .collect();
    Ok(EvalReport {
        grid_name: train.metadata.grid_name.clone(),
        grid_hash: train.metadata.grid_hash.clone(),
        train_rows: train.len(),
        train_dataset_hash: train_hash,
        test_dataset_hashes: tests
            .iter()
            .map(|t| (t.metadata.config.test_case, t.content_hash()))
            .collect(),
        base_seed,
        repeats,
        models,
    })
}

/// Scores already-fitted models on each test set, as a single-repeat report.
/// Every model must come from the same training data.
pub fn score_trained(models: &[TrainedModel], tests: &[Dataset]) -> Result<EvalReport, EvalError> {
    let (first, first_test) = match (models.first(), tests.first()) {
        (Some(m), Some(t)) => (m, t),
        _ => return Err(EvalError::BadExperiment("need at least one model and one test set".into())),
    };
    if tests.iter().any(|t| t.metadata.grid_hash != first_test.metadata.grid_hash) {
        return Err(EvalError::BadExperiment("test sets must share one grid".into()));
    }
    let train_hash = first.metadata.training_data_hash.clone().unwrap_or_default();
    if models.iter().any(|m| m.metadata.training_data_hash.clone().unwrap_or_default() != train_hash) {
        return Err(EvalError::BadExperiment("models were trained on different datasets".into()));
    }
    let reports = models
        .par_iter()
        .map(|model| {
            let by_test_case = tests
                .iter()
                .map(|t| {
                    let pred = model.predict(t.features.view())?;
                    let v = mape(t.targets.view(), pred.view())?;
                    Ok(CaseStats::from_values(t.metadata.config.test_case, t.len(), vec![v]))
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok(ModelReport {
                label: model.spec.label.clone(),
                kind: model.kind(),
                spec: model.spec.clone(),
                seeds: vec![model.seed],
                by_test_case,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport {
        grid_name: first_test.metadata.grid_name.clone(),
        grid_hash: first_test.metadata.grid_hash.clone(),
        train_rows: first.metadata.n_rows,
        train_dataset_hash: train_hash,
        test_dataset_hashes: tests
            .iter()
            .map(|t| (t.metadata.config.test_case, t.content_hash()))
            .collect(),
        base_seed: first.seed,
        repeats: 1,
        models: reports,
    })
}

/// Generates the training set once and each test set once, then runs
/// [`evaluate_models`].
pub fn run_accuracy_experiment(
    grid: &GridCase,
    train_cfg: &ScenarioConfig,
    test_cfgs: &[ScenarioConfig],
    specs: &[ModelSpec],
    repeats: usize,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    let train = generate_dataset(grid, train_cfg)?;
    let tests = test_cfgs
        .iter()
        .map(|c| generate_dataset(grid, c))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_models(&train, &tests, specs, repeats, base_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub label: String,
    pub size: usize,
    pub mean_mape: f64,
    pub std_mape: f64,
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub grid_name: String,
    pub master_dataset_hash: String,
    pub test_dataset_hash: String,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn mean(&self, label: &str, size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.label == label && r.size == size)
            .map(|r| r.mean_mape)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Dataset size against MAPE, one row per (model, size).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "size", "mean_mape", "std_mape"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.size.to_string(),
                r.mean_mape.to_string(),
                r.std_mape.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Trains on nested prefixes of `master` and scores on the shared `test` set.
pub fn run_dataset_size_study(
    master: &Dataset,
    test: &Dataset,
    sizes: &[usize],
    specs: &[ModelSpec],
    repeats: usize,
    base_seed: u64,
) -> Result<StudyReport, EvalError> {
    if sizes.is_empty() {
        return Err(EvalError::BadSizes("no sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::BadSizes(format!("sizes must be ascending, got {sizes:?}")));
    }
    if sizes[0] == 0 {
        return Err(EvalError::BadSizes("sizes must be positive".into()));
    }
    let largest = *sizes.last().expect("non-empty");
    if largest > master.len() {
        return Err(EvalError::BadSizes(format!(
            "size {largest} exceeds the master dataset ({} rows)",
            master.len()
        )));
    }
    let mut rows = Vec::with_capacity(sizes.len() * specs.len());
    for spec in specs {
        for &size in sizes {
            let prefix = master.head(size)?;
            let report = evaluate_models(&prefix, std::slice::from_ref(test), std::slice::from_ref(spec), repeats, base_seed)?;
            let stats = &report.models[0].by_test_case[0];
            rows.push(StudyRow {
                label: spec.label.clone(),
                size,
                mean_mape: stats.mean_mape,
                std_mape: stats.std_mape,
                per_repeat: stats.per_repeat.clone(),
            });
        }
    }
    Ok(StudyReport {
        grid_name: master.metadata.grid_name.clone(),
        master_dataset_hash: master.content_hash(),
        test_dataset_hash: test.content_hash(),
        sizes: sizes.to_vec(),
        repeats,
        base_seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::triangle;
    use crate::models::{ModelHyper, TreeHyper};
    use crate::scenario::PerturbationSpec;

    fn dtr(leaves: usize) -> ModelSpec {
        ModelSpec::new(
            "DTR",
            ModelHyper::Dtr(TreeHyper {
                max_leaf_nodes: leaves,
                min_samples_leaf: 1,
                min_samples_split: 2,
            }),
        )
    }

    fn cfg(n: usize, tc: TestCase, seed: u64) -> ScenarioConfig {
        ScenarioConfig::new(n, PerturbationSpec::new(-20.0, 20.0), tc, seed)
    }

    #[test]
    fn constant_targets_give_zero_error() {
        // Two-bus grid, never congested: every LMP equals the marginal cost.
        let g = crate::grid::tests::two_bus(0.0);
        let r = run_accuracy_experiment(&g, &cfg(20, TestCase::Base, 1), &[cfg(5, TestCase::Base, 2)], &[dtr(1)], 1, 0)
            .unwrap();
        // Interior-point LMPs agree with the marginal cost to solver tolerance.
        assert!(r.models[0].by_test_case[0].mean_mape < 1e-6);
    }

    #[test]
    fn report_is_reproducible_and_self_consistent() {
        let g = triangle();
        let tests = [cfg(10, TestCase::Base, 2), cfg(10, TestCase::Derate10, 3)];
        let a = run_accuracy_experiment(&g, &cfg(40, TestCase::Base, 1), &tests, &[dtr(4)], 3, 9).unwrap();
        let b = run_accuracy_experiment(&g, &cfg(40, TestCase::Base, 1), &tests, &[dtr(4)], 3, 9).unwrap();
        assert_eq!(a, b);
        for c in &a.models[0].by_test_case {
            let m = c.per_repeat.iter().sum::<f64>() / c.per_repeat.len() as f64;
            assert_eq!(m, c.mean_mape);
            assert!(c.mean_mape >= 0.0);
        }
        let back: EvalReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.to_csv().lines().count(), 3);
    }

    #[test]
    fn study_validates_sizes_and_handles_duplicates() {
        let g = triangle();
        let master = generate_dataset(&g, &cfg(30, TestCase::Base, 1)).unwrap();
        let test = generate_dataset(&g, &cfg(8, TestCase::Base, 2)).unwrap();
        let r = run_dataset_size_study(&master, &test, &[10, 10], &[dtr(3)], 1, 0).unwrap();
        assert_eq!(r.rows[0].mean_mape, r.rows[1].mean_mape);
        assert!(matches!(
            run_dataset_size_study(&master, &test, &[20, 10], &[dtr(3)], 1, 0),
            Err(EvalError::BadSizes(_))
        ));
        assert!(matches!(
            run_dataset_size_study(&master, &test, &[10, 31], &[dtr(3)], 1, 0),
            Err(EvalError::BadSizes(_))
        ));
    }

    #[test]
    fn scoring_saved_models_matches_a_single_repeat() {
        let g = triangle();
        let train = generate_dataset(&g, &cfg(40, TestCase::Base, 1)).unwrap();
        let test = generate_dataset(&g, &cfg(10, TestCase::Base, 2)).unwrap();
        let full = evaluate_models(&train, std::slice::from_ref(&test), &[dtr(4)], 1, 5).unwrap();
        let mut m = fit(&dtr(4), train.features.view(), train.targets.view(), repeat_seed(5, 0)).unwrap();
        m.metadata.training_data_hash = Some(train.content_hash());
        let scored = score_trained(&[m], &[test]).unwrap();
        assert_eq!(scored.models[0].by_test_case, full.models[0].by_test_case);
        assert_eq!(scored.train_dataset_hash, full.train_dataset_hash);
        assert!(matches!(score_trained(&[], &[]), Err(EvalError::BadExperiment(_))));
    }
}
