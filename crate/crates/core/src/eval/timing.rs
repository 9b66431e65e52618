use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::Dataset;
use crate::grid::GridCase;
use crate::models::{fit, ModelKind, ModelSpec, TrainedModel};
use crate::opf::{solve_dcopf, DemandVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn detect(threads: usize) -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu_model,
            threads,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTiming {
    pub label: String,
    pub kind: ModelKind,
    pub train_seconds: f64,
    pub processing_seconds: f64,
    /// `solver_seconds / processing_seconds`.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub grid_name: String,
    pub n_instances: usize,
    pub train_rows: usize,
    pub solver_seconds: f64,
    pub models: Vec<ModelTiming>,
    pub environment: Environment,
}

impl TimingReport {
    pub fn model(&self, label: &str) -> Option<&ModelTiming> {
        self.models.iter().find(|m| m.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Solver row followed by one row per model.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "kind", "n_instances", "train_seconds", "processing_seconds", "speedup"])
            .expect("in-memory write");
        w.write_record([
            "solver".to_string(),
            "DC-OPF".to_string(),
            self.n_instances.to_string(),
            String::new(),
            self.solver_seconds.to_string(),
            "1".to_string(),
        ])
        .expect("in-memory write");
        for m in &self.models {
            w.write_record([
                m.label.clone(),
                m.kind.to_string(),
                self.n_instances.to_string(),
                m.train_seconds.to_string(),
                m.processing_seconds.to_string(),
                m.speedup.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Grid label against seconds (log axis), one series per method.
    pub fn plot_data(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["grid", "series", "measure", "seconds"])
            .expect("in-memory write");
        w.write_record([&self.grid_name, "solver", "processing", &self.solver_seconds.to_string()])
            .expect("in-memory write");
        for m in &self.models {
            for (measure, v) in [("processing", m.processing_seconds), ("training", m.train_seconds)] {
                w.write_record([&self.grid_name, &m.label, measure, &v.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    // Guard against a zero reading on coarse clocks.
    (r, t.elapsed().as_secs_f64().max(1e-9))
}

/// Times solving every row of `instances`, one fit per model on `train`, and
/// one batched prediction per model over `instances`. All timed sections run
/// on a single worker thread; one warm-up call precedes each measurement.
pub fn run_timing_benchmark(
    grid: &GridCase,
    train: &Dataset,
    instances: &Dataset,
    specs: &[ModelSpec],
    seed: u64,
) -> Result<(TimingReport, Vec<TrainedModel>), EvalError> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let scenarios: Vec<(GridCase, DemandVector)> = (0..instances.len())
        .map(|j| instances.scenario(grid, j))
        .collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    pool.install(|| {
        let (g0, d0) = &scenarios[0];
        solve_dcopf(g0, d0)?;
        let (solved, solver_seconds) = timed(|| {
            scenarios
                .iter()
                .map(|(g, d)| solve_dcopf(g, d))
                .collect::<Result<Vec<_>, _>>()
        });
        solved?;
        let warm = instances.head(1)?;
        let mut models = Vec::with_capacity(specs.len());
        let mut timings = Vec::with_capacity(specs.len());
        for spec in specs {
            let (model, train_seconds) = timed(|| fit(spec, train.features.view(), train.targets.view(), seed));
            let mut model = model?;
            model.metadata.training_data_hash = Some(train.content_hash());
            model.predict(warm.features.view())?;
            let (pred, processing_seconds) = timed(|| model.predict(instances.features.view()));
            pred?;
            timings.push(ModelTiming {
                label: spec.label.clone(),
                kind: spec.hyper.kind(),
                train_seconds,
                processing_seconds,
                speedup: solver_seconds / processing_seconds,
            });
            models.push(model);
        }
        Ok((
            TimingReport {
                grid_name: grid.name.clone(),
                n_instances: instances.len(),
                train_rows: train.len(),
                solver_seconds,
                models: timings,
                environment: Environment::detect(1),
            },
            models,
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::triangle;
    use crate::models::{ModelHyper, TreeHyper};
    use crate::scenario::{generate_dataset, PerturbationSpec, ScenarioConfig, TestCase};

    #[test]
    fn reports_positive_times_and_consistent_ratios() {
        let g = triangle();
        let mk = |n, seed| {
            generate_dataset(
                &g,
                &ScenarioConfig::new(n, PerturbationSpec::new(-10.0, 10.0), TestCase::Base, seed),
            )
            .unwrap()
        };
        let spec = ModelSpec::new(
            "DTR",
            ModelHyper::Dtr(TreeHyper {
                max_leaf_nodes: 4,
                min_samples_leaf: 1,
                min_samples_split: 2,
            }),
        );
        let (r, models) = run_timing_benchmark(&g, &mk(20, 1), &mk(10, 2), &[spec], 0).unwrap();
        assert_eq!(models.len(), 1);
        let m = &r.models[0];
        assert!(r.solver_seconds > 0.0 && m.processing_seconds > 0.0 && m.train_seconds > 0.0);
        assert_eq!(m.speedup, r.solver_seconds / m.processing_seconds);
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn empty_benchmark_is_rejected() {
        let g = triangle();
        let ds = generate_dataset(
            &g,
            &ScenarioConfig::new(3, PerturbationSpec::new(-10.0, 10.0), TestCase::Base, 1),
        )
        .unwrap();
        let empty = ds.head(0).unwrap();
        assert!(matches!(
            run_timing_benchmark(&g, &ds, &empty, &[], 0),
            Err(EvalError::NoInstances)
        ));
    }
}
