use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use lmpbench::dataset::Dataset;
use lmpbench::eval::{evaluate_models, run_dataset_size_study, run_timing_benchmark, score_trained, EvalReport};
use lmpbench::grid::{parse_case, GridCase};
use lmpbench::models::{fit, load_model, save_model, ModelManifest, TrainedModel};
use lmpbench::scenario::generate_dataset;
use serde::Serialize;

use crate::config::{Effective, RunConfig};
use crate::{InvalidData, Usage};

pub const MANIFEST_FILE: &str = "manifest.json";

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Builds the worker pool for generation and training.
fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Usage("threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")
}

fn make_dataset(grid: &GridCase, eff: &Effective, n: usize, test_case: u8, seed: u64) -> Result<Dataset> {
    let cfg = eff.scenario(n, test_case, seed)?;
    let t = Instant::now();
    let ds = generate_dataset(grid, &cfg).with_context(|| format!("generating {n} instances ({})", cfg.test_case))?;
    eprintln!(
        "generated {} {} instances in {:.2} s ({} resamples)",
        ds.len(),
        cfg.test_case,
        t.elapsed().as_secs_f64(),
        ds.metadata.total_resamples()
    );
    Ok(ds)
}

fn read_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::read(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

#[derive(Serialize)]
struct CaseSummary<'a> {
    name: &'a str,
    buses: usize,
    generators: usize,
    branches: usize,
    limited_branches: usize,
    total_demand_mw: f64,
    content_hash: String,
    valid: bool,
    violations: Vec<String>,
}

pub fn parse(path: &Path, json: bool) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let grid = parse_case(&text).with_context(|| format!("parsing {}", path.display()))?;
    let report = grid.validate();
    let summary = CaseSummary {
        name: &grid.name,
        buses: grid.buses.len(),
        generators: grid.generators.len(),
        branches: grid.branches.len(),
        limited_branches: grid.branches.iter().filter(|b| b.is_limited()).count(),
        total_demand_mw: grid.base_demand().iter().sum(),
        content_hash: grid.content_hash(),
        valid: report.is_valid(),
        violations: report.violations.iter().map(|v| v.to_string()).collect(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{}: {} buses, {} generators, {} branches",
            summary.name, summary.buses, summary.generators, summary.branches
        );
    }
    if !report.is_valid() {
        for v in &summary.violations {
            eprintln!("invalid: {v}");
        }
        return Err(InvalidData(format!("{} failed validation", path.display())).into());
    }
    Ok(())
}

pub fn generate(cfg: RunConfig) -> Result<()> {
    let grid = cfg.load_grid()?;
    let eff = cfg.resolve("generate", &grid.name)?;
    eff.echo()?;
    let ds = pool(eff.threads)?.install(|| make_dataset(&grid, &eff, eff.n_instances, eff.test_case, eff.seed))?;
    ds.write(&eff.output)?;
    println!(
        "wrote {} rows x {} features to {} (sha256 {})",
        ds.len(),
        ds.features.ncols(),
        eff.output.display(),
        ds.content_hash()
    );
    Ok(())
}

pub fn train(cfg: RunConfig, data: Option<PathBuf>) -> Result<()> {
    let (data, grid) = match &data {
        Some(dir) => (Some(read_dataset(dir)?), None),
        None => (None, Some(cfg.load_grid()?)),
    };
    let grid_name = match (&data, &grid) {
        (Some(d), _) => d.metadata.grid_name.clone(),
        (None, Some(g)) => g.name.clone(),
        _ => unreachable!(),
    };
    let eff = cfg.resolve("train", &grid_name)?;
    eff.echo()?;
    let pool = pool(eff.threads)?;
    let train = match (data, &grid) {
        (Some(d), _) => d,
        (None, Some(g)) => pool.install(|| make_dataset(g, &eff, eff.n_instances, eff.test_case, eff.seed))?,
        _ => unreachable!(),
    };
    let hash = train.content_hash();
    let mut manifest = ModelManifest::default();
    for spec in &eff.models {
        let t = Instant::now();
        let mut model = pool
            .install(|| fit(spec, train.features.view(), train.targets.view(), eff.seed))
            .with_context(|| format!("training {}", spec.label))?;
        model.metadata.training_data_hash = Some(hash.clone());
        let file = format!("{}.model.json", spec.label);
        save_model(&model, &eff.output.join(&file))?;
        manifest.models.push(model.manifest_entry(&file));
        eprintln!("trained {} on {} rows in {:.2} s", spec.label, train.len(), t.elapsed().as_secs_f64());
    }
    write(&eff.output, MANIFEST_FILE, &serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {} models to {}", manifest.models.len(), eff.output.display());
    Ok(())
}

fn load_trained(dir: &Path, labels: Option<&[String]>) -> Result<Vec<TrainedModel>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut out = Vec::new();
    for entry in &manifest.models {
        if labels.is_some_and(|ls| !ls.iter().any(|l| l.eq_ignore_ascii_case(&entry.label))) {
            continue;
        }
        out.push(load_model(&dir.join(&entry.file))?);
    }
    if out.is_empty() {
        return Err(Usage(format!("no matching models in {}", path.display())).into());
    }
    Ok(out)
}

fn write_eval(eff: &Effective, report: &EvalReport) -> Result<()> {
    write(&eff.output, "report.json", &report.to_json())?;
    write(&eff.output, "report.csv", &report.to_csv())?;
    write(&eff.output, "report_plot.csv", &report.plot_data())?;
    for m in &report.models {
        for c in &m.by_test_case {
            println!(
                "{:<6} test case {} ({}): MAPE {:.4}% +/- {:.4}",
                m.label,
                c.test_case.id(),
                c.test_case,
                c.mean_mape,
                c.std_mape
            );
        }
    }
    Ok(())
}

pub fn evaluate(cfg: RunConfig, models_dir: Option<PathBuf>, train: Option<PathBuf>, test: Vec<PathBuf>) -> Result<()> {
    let tests: Vec<Dataset> = test.iter().map(|d| read_dataset(d)).collect::<Result<_>>()?;
    let train = train.as_deref().map(read_dataset).transpose()?;
    let trained = models_dir
        .as_deref()
        .map(|d| load_trained(d, cfg.models.as_deref()))
        .transpose()?;
    let needs_grid = tests.is_empty() || (train.is_none() && trained.is_none());
    let grid = needs_grid.then(|| cfg.load_grid()).transpose()?;
    let grid_name = match (&grid, tests.first(), &train) {
        (Some(g), _, _) => g.name.clone(),
        (None, Some(t), _) => t.metadata.grid_name.clone(),
        (None, None, Some(t)) => t.metadata.grid_name.clone(),
        _ => unreachable!(),
    };
    let mut eff_cfg = cfg.clone();
    if let Some(models) = &trained {
        // Saved models carry their own settings.
        eff_cfg.models = Some(models.iter().map(|m| m.spec.label.clone()).collect());
        for m in models {
            eff_cfg.hyper.insert(
                m.spec.label.clone(),
                toml::Table::try_from(&m.spec.hyper).context("echoing model settings")?,
            );
        }
    }
    let eff = eff_cfg.resolve("evaluate", &grid_name)?;
    eff.echo()?;
    let pool = pool(eff.threads)?;
    let tests = if tests.is_empty() {
        let g = grid.as_ref().expect("grid loaded when tests are generated");
        eff.test_cases
            .iter()
            .map(|&tc| pool.install(|| make_dataset(g, &eff, eff.test_instances, tc, eff.test_seed)))
            .collect::<Result<Vec<_>>>()?
    } else {
        tests
    };
    let report = match trained {
        Some(models) => pool.install(|| score_trained(&models, &tests))?,
        None => {
            let train = match (train, &grid) {
                (Some(t), _) => t,
                (None, Some(g)) => pool.install(|| make_dataset(g, &eff, eff.n_instances, eff.test_case, eff.seed))?,
                _ => unreachable!(),
            };
            pool.install(|| evaluate_models(&train, &tests, &eff.models, eff.repeats, eff.seed))?
        }
    };
    write_eval(&eff, &report)
}

pub fn bench(cfg: RunConfig) -> Result<()> {
    let grid = cfg.load_grid()?;
    let eff = cfg.resolve("bench", &grid.name)?;
    eff.echo()?;
    let (train, instances) = pool(eff.threads)?.install(|| -> Result<_> {
        Ok((
            make_dataset(&grid, &eff, eff.n_instances, eff.test_case, eff.seed)?,
            make_dataset(&grid, &eff, eff.bench_instances, eff.test_case, eff.test_seed)?,
        ))
    })?;
    let (report, _) = run_timing_benchmark(&grid, &train, &instances, &eff.models, eff.seed)?;
    write(&eff.output, "timing.json", &report.to_json())?;
    write(&eff.output, "timing.csv", &report.to_csv())?;
    write(&eff.output, "timing_plot.csv", &report.plot_data())?;
    println!("solver: {:.3} s for {} instances", report.solver_seconds, report.n_instances);
    for m in &report.models {
        println!(
            "{:<6} train {:.3} s, predict {:.4} s, speedup {:.1}x",
            m.label, m.train_seconds, m.processing_seconds, m.speedup
        );
    }
    Ok(())
}

pub fn study(cfg: RunConfig) -> Result<()> {
    let grid = cfg.load_grid()?;
    let eff = cfg.resolve("study", &grid.name)?;
    eff.echo()?;
    let largest = *eff.sizes.iter().max().ok_or_else(|| Usage("no sizes given".into()))?;
    let pool = pool(eff.threads)?;
    let master = pool.install(|| make_dataset(&grid, &eff, largest, eff.test_case, eff.seed))?;
    let test = pool.install(|| make_dataset(&grid, &eff, eff.test_instances, eff.test_case, eff.test_seed))?;
    let report =
        pool.install(|| run_dataset_size_study(&master, &test, &eff.sizes, &eff.models, eff.repeats, eff.seed))?;
    write(&eff.output, "study.json", &report.to_json())?;
    write(&eff.output, "study.csv", &report.to_csv())?;
    for r in &report.rows {
        println!("{:<6} {:>7} rows: MAPE {:.4}% +/- {:.4}", r.label, r.size, r.mean_mape, r.std_mape);
    }
    Ok(())
}
