use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lmpbench::grid::{parse_case, GridCase};
use lmpbench::models::{ModelHyper, ModelSpec};
use lmpbench::presets::{self, Preset};
use lmpbench::scenario::{PerturbationSpec, ScenarioConfig, TestCase};
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const DEFAULT_GRID: &str = "case30";
pub const DEFAULT_OUTPUT: &str = "lmpbench-out";

/// Keys accepted in a config file. Every key is optional; command-line flags
/// override whatever the file sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name or path to a case file.
    pub grid: Option<String>,
    /// Global perturbation range in percent, `[low, high]`.
    pub range: Option<[f64; 2]>,
    pub test_case: Option<u8>,
    /// Test cases scored by `evaluate` when no test datasets are given.
    pub test_cases: Option<Vec<u8>>,
    pub n_instances: Option<usize>,
    pub test_instances: Option<usize>,
    pub bench_instances: Option<usize>,
    pub seed: Option<u64>,
    pub test_seed: Option<u64>,
    pub models: Option<Vec<String>>,
    /// Per-label hyperparameter overrides. Keys not given keep the preset value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hyper: BTreeMap<String, toml::Table>,
    pub repeats: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }

    /// Keys set in `other` replace keys set here.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            grid,
            range,
            test_case,
            test_cases,
            n_instances,
            test_instances,
            bench_instances,
            seed,
            test_seed,
            models,
            repeats,
            sizes,
            threads,
            output
        );
        self.hyper.extend(other.hyper);
        self
    }

    pub fn grid_source(&self) -> &str {
        self.grid.as_deref().unwrap_or(DEFAULT_GRID)
    }

    /// A path on disk wins over a preset of the same name.
    pub fn load_grid(&self) -> Result<GridCase> {
        let src = self.grid_source();
        let path = Path::new(src);
        if path.is_file() {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return parse_case(&text).with_context(|| format!("parsing {}", path.display()));
        }
        if src == DEFAULT_GRID {
            return Ok(presets::case30()?);
        }
        Err(Usage(format!(
            "grid `{src}` is neither a file nor a bundled case (bundled: {DEFAULT_GRID})"
        ))
        .into())
    }

    pub fn resolve(&self, command: &str, grid_name: &str) -> Result<Effective> {
        let preset = preset_for(grid_name);
        let range = match (self.range, &preset) {
            (Some(r), _) => r,
            (None, Some(p)) => [p.range.0, p.range.1],
            (None, None) => {
                return Err(Usage(format!("no preset for grid `{grid_name}`; set `range`")).into());
            }
        };
        let seed = self.seed.unwrap_or(42);
        let test_seed = self.test_seed.unwrap_or(seed.wrapping_add(1));
        for (name, s) in [("seed", seed), ("test_seed", test_seed)] {
            if s > i64::MAX as u64 {
                return Err(Usage(format!("{name} must not exceed {}", i64::MAX)).into());
            }
        }
        let test_case = self.test_case.unwrap_or(1);
        let test_cases = self.test_cases.clone().unwrap_or_else(|| vec![1, 2, 3, 4]);
        for &id in std::iter::once(&test_case).chain(&test_cases) {
            test_case_from(id)?;
        }
        let labels = self.models.clone().unwrap_or_else(|| match &preset {
            Some(p) => p.models().into_iter().map(|m| m.label).collect(),
            None => self.hyper.keys().cloned().collect(),
        });
        if labels.is_empty() {
            return Err(Usage("no models selected".into()).into());
        }
        let models = labels
            .iter()
            .map(|l| model_spec(l, preset.as_ref(), &self.hyper))
            .collect::<Result<Vec<_>>>()?;
        let sizes = self.sizes.clone().unwrap_or_else(|| vec![1000, 2000, 5000]);
        Ok(Effective {
            command: command.to_string(),
            grid: self.grid_source().to_string(),
            grid_name: grid_name.to_string(),
            preset: preset.map(|p| p.name.to_string()),
            range,
            test_case,
            test_cases,
            n_instances: self.n_instances.unwrap_or(5000),
            test_instances: self.test_instances.unwrap_or(100),
            bench_instances: self.bench_instances.unwrap_or(5000),
            seed,
            test_seed,
            repeats: self.repeats.unwrap_or(10),
            sizes,
            threads: self.threads.unwrap_or_else(default_threads),
            output: self.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT).join(command)),
            models,
        })
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Looks up a preset by grid name, accepting library-style names such as
/// `pglib_opf_case240_pserc`.
pub fn preset_for(grid_name: &str) -> Option<Preset> {
    presets::preset(grid_name).or_else(|| {
        let stem = grid_name.strip_prefix("pglib_opf_").unwrap_or(grid_name);
        presets::preset(stem.split('_').next().unwrap_or(stem))
    })
}

pub fn test_case_from(id: u8) -> Result<TestCase> {
    TestCase::from_id(id).ok_or_else(|| Usage(format!("test case must be 1-4, got {id}")).into())
}

fn model_spec(label: &str, preset: Option<&Preset>, hyper: &BTreeMap<String, toml::Table>) -> Result<ModelSpec> {
    let base = preset.and_then(|p| p.model(label));
    let label = base.as_ref().map_or(label.to_string(), |b| b.label.clone());
    let Some(overrides) = hyper.get(&label).or_else(|| hyper.iter().find(|(k, _)| k.eq_ignore_ascii_case(&label)).map(|(_, v)| v)) else {
        return base.ok_or_else(|| Usage(format!("unknown model `{label}`; give its settings under [hyper.{label}]")).into());
    };
    let mut value = match &base {
        Some(b) => serde_json::to_value(&b.hyper)?,
        None => serde_json::json!({}),
    };
    let obj = value.as_object_mut().expect("hyperparameters serialize to a map");
    for (k, v) in overrides {
        obj.insert(k.clone(), serde_json::to_value(v)?);
    }
    let hyper: ModelHyper =
        serde_json::from_value(value).map_err(|e| Usage(format!("[hyper.{label}]: {e}")))?;
    hyper.validate().map_err(|e| Usage(format!("[hyper.{label}]: {e}")))?;
    Ok(ModelSpec::new(label, hyper))
}

/// Fully resolved settings, echoed next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effective {
    pub command: String,
    pub grid: String,
    pub grid_name: String,
    pub preset: Option<String>,
    pub range: [f64; 2],
    pub test_case: u8,
    pub test_cases: Vec<u8>,
    pub n_instances: usize,
    pub test_instances: usize,
    pub bench_instances: usize,
    pub seed: u64,
    pub test_seed: u64,
    pub repeats: usize,
    pub sizes: Vec<usize>,
    pub threads: usize,
    pub output: PathBuf,
    pub models: Vec<ModelSpec>,
}

impl Effective {
    pub fn perturbation(&self) -> Result<PerturbationSpec> {
        let p = PerturbationSpec::new(self.range[0], self.range[1]);
        p.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(p)
    }

    pub fn scenario(&self, n: usize, test_case: u8, seed: u64) -> Result<ScenarioConfig> {
        Ok(ScenarioConfig::new(n, self.perturbation()?, test_case_from(test_case)?, seed))
    }

    /// Writes `<command>-config.toml` into the output directory.
    pub fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.output).with_context(|| format!("creating {}", self.output.display()))?;
        let path = self.output.join(format!("{}-config.toml", self.command));
        let text = toml::to_string(self).context("serializing effective config")?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("gird = \"case30\"").is_err());
        let c: RunConfig = toml::from_str("grid = \"case30\"\nrange = [-10.0, 10.0]").unwrap();
        assert_eq!(c.range, Some([-10.0, 10.0]));
    }

    #[test]
    fn flags_override_file_keys() {
        let file = RunConfig {
            seed: Some(1),
            repeats: Some(3),
            ..Default::default()
        };
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!((c.seed, c.repeats), (Some(9), Some(3)));
    }

    #[test]
    fn preset_defaults_and_partial_overrides() {
        let c: RunConfig = toml::from_str("models = [\"gbr\", \"mine\"]\n[hyper.GBR]\nn_estimators = 7\n[hyper.mine]\nkind = \"dtr\"\nmax_leaf_nodes = 4\nmin_samples_leaf = 1\nmin_samples_split = 2\n").unwrap();
        let e = c.resolve("train", "case30").unwrap();
        assert_eq!(e.range, [-30.0, 30.0]);
        assert_eq!(e.models[0].label, "GBR");
        match &e.models[0].hyper {
            ModelHyper::Gbr(h) => assert_eq!((h.n_estimators, h.max_depth), (7, 2)),
            other => panic!("{other:?}"),
        }
        assert_eq!(e.models[1].hyper.kind(), lmpbench::models::ModelKind::Dtr);
        let back: Effective = toml::from_str(&toml::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let c: RunConfig = toml::from_str("[hyper.DTR]\nmax_leaves = 3\n").unwrap();
        assert!(c.resolve("train", "case30").unwrap_err().downcast_ref::<Usage>().is_some());
        let c = RunConfig {
            test_case: Some(5),
            ..Default::default()
        };
        assert!(c.resolve("generate", "case30").is_err());
        assert!(RunConfig::default().resolve("generate", "mystery").is_err());
    }

    #[test]
    fn library_style_names_find_presets() {
        assert_eq!(preset_for("pglib_opf_case240_pserc").unwrap().name, "case240");
        assert!(preset_for("case300").is_none());
    }
}
