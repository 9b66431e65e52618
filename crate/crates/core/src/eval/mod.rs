//! Accuracy metrics, repeated train/test experiments and timing benchmarks.

mod experiment;
mod timing;

use ndarray::ArrayView2;

use crate::dataset::DatasetError;
use crate::models::ModelError;
use crate::opf::OpfError;
use crate::scalar::Scalar;
use crate::scenario::ScenarioError;

pub use experiment::{
    evaluate_models, repeat_seed, run_accuracy_experiment, run_dataset_size_study, score_trained, CaseStats, EvalReport,
    ModelReport, StudyReport, StudyRow,
};
pub use timing::{run_timing_benchmark, Environment, ModelTiming, TimingReport};

/// Ground-truth magnitudes below this abort the metric.
pub const DENOMINATOR_GUARD: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: truth {truth:?} vs prediction {pred:?}")]
    Shape { truth: (usize, usize), pred: (usize, usize) },
    #[error("empty input")]
    Empty,
    #[error("ground truth at row {row}, node {node} is {value:e}, too close to zero for a percentage error")]
    NearZero { row: usize, node: usize, value: f64 },
    #[error("invalid study sizes: {0}")]
    BadSizes(String),
    #[error("benchmark needs at least one instance")]
    NoInstances,
    #[error("invalid experiment: {0}")]
    BadExperiment(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Mean absolute percentage error over every (row, node) entry, in percent.
pub fn mape<T: Scalar>(y_true: ArrayView2<T>, y_pred: ArrayView2<T>) -> Result<T, EvalError> {
    if y_true.dim() != y_pred.dim() {
        return Err(EvalError::Shape {
            truth: y_true.dim(),
            pred: y_pred.dim(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let guard = T::lit(DENOMINATOR_GUARD);
    let mut total = T::zero();
    for ((row, node), t) in y_true.indexed_iter() {
        if !(t.abs() >= guard) {
            return Err(EvalError::NearZero {
                row,
                node,
                value: t.to_f64_lossy(),
            });
        }
        total += ((*t - y_pred[(row, node)]) / *t).abs();
    }
    Ok(T::lit(100.0) * total / T::lit(y_true.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn worked_values() {
        let a = array![[100.0]];
        assert_eq!(mape(a.view(), array![[95.0]].view()).unwrap(), 5.0);
        let t = array![[10.0f64, 20.0]];
        let p = array![[11.0, 18.0]];
        assert!((mape(t.view(), p.view()).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(t.view(), t.view()).unwrap(), 0.0);
    }

    #[test]
    fn guard_names_the_entry() {
        let t = array![[1.0, 2.0], [3.0, 0.0]];
        match mape(t.view(), t.view()) {
            Err(EvalError::NearZero { row: 1, node: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_and_empty_errors() {
        let t = array![[1.0, 2.0]];
        assert!(matches!(mape(t.view(), array![[1.0]].view()), Err(EvalError::Shape { .. })));
        let e = ndarray::Array2::<f64>::zeros((0, 2));
        assert!(matches!(mape(e.view(), e.view()), Err(EvalError::Empty)));
    }

    #[test]
    fn single_precision() {
        let t = array![[10.0f32, 20.0]];
        let p = array![[11.0f32, 18.0]];
        assert!((mape(t.view(), p.view()).unwrap() - 10.0).abs() < 1e-4);
    }
}
