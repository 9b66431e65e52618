//! Heterogeneous problem instances: global-plus-nodal load perturbation,
//! contingencies, per-bus features and labelled datasets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetMetadata, InstanceRecord};
use crate::grid::{GridCase, Modification, ModificationError};
use crate::opf::{solve_dcopf, DemandVector, OpfError};
use crate::seed::{derive_seed, Purpose};

/// Identifier recorded in dataset metadata for the randomness source.
pub const RNG_IDENTIFIER: &str = "chacha8/splitmix64-mix/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Global perturbation range endpoints, in percent.
    pub s_grid_min: f64,
    pub s_grid_max: f64,
    #[serde(default = "default_noise_low")]
    pub nodal_noise_low: f64,
    #[serde(default = "default_noise_high")]
    pub nodal_noise_high: f64,
}

fn default_noise_low() -> f64 {
    0.9
}

fn default_noise_high() -> f64 {
    1.1
}

impl PerturbationSpec {
    pub fn new(s_grid_min: f64, s_grid_max: f64) -> Self {
        Self {
            s_grid_min,
            s_grid_max,
            nodal_noise_low: default_noise_low(),
            nodal_noise_high: default_noise_high(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let finite = [self.s_grid_min, self.s_grid_max, self.nodal_noise_low, self.nodal_noise_high]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.s_grid_min > self.s_grid_max {
            return Err(ScenarioError::BadConfig(format!(
                "perturbation range {}..{} is not an ordered finite pair",
                self.s_grid_min, self.s_grid_max
            )));
        }
        if !(self.nodal_noise_low > 0.0 && self.nodal_noise_low < self.nodal_noise_high) {
            return Err(ScenarioError::BadConfig(format!(
                "nodal noise range ({}, {}) must satisfy 0 < low < high",
                self.nodal_noise_low, self.nodal_noise_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestCase {
    Base,
    /// 10% reduction of every finite line rating.
    Derate10,
    /// One random in-service line removed.
    LineOut,
    /// One random in-service generator removed.
    GenOut,
}

impl TestCase {
    pub const ALL: [TestCase; 4] = [TestCase::Base, TestCase::Derate10, TestCase::LineOut, TestCase::GenOut];

    /// Numbering 1–4 used on the command line and in reports.
    pub fn id(self) -> u8 {
        match self {
            TestCase::Base => 1,
            TestCase::Derate10 => 2,
            TestCase::LineOut => 3,
            TestCase::GenOut => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.id() == id)
    }
}

impl std::fmt::Display for TestCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TestCase::Base => "base",
            TestCase::Derate10 => "derate10",
            TestCase::LineOut => "line_out",
            TestCase::GenOut => "gen_out",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_instances: usize,
    pub perturbation: PerturbationSpec,
    pub test_case: TestCase,
    pub seed: u64,
    #[serde(default = "default_max_resamples")]
    pub max_resamples: usize,
}

fn default_max_resamples() -> usize {
    100
}

impl ScenarioConfig {
    pub fn new(n_instances: usize, perturbation: PerturbationSpec, test_case: TestCase, seed: u64) -> Self {
        Self {
            n_instances,
            perturbation,
            test_case,
            seed,
            max_resamples: default_max_resamples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    BadConfig(String),
    #[error("no admissible {test_case} contingency after {attempts} draws")]
    ContingencyImpossible { test_case: TestCase, attempts: usize },
    #[error("instance {instance}: no optimal solve after {attempts} attempts (last status {last})")]
    ResamplesExhausted {
        instance: usize,
        attempts: usize,
        last: String,
    },
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Modification(#[from] ModificationError),
}

/// Per-bus `(P_d, P_l)` pairs laid out as `[P_d by bus…, P_l by bus…]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn demand(&self) -> &[f64] {
        &self.0[..self.0.len() / 2]
    }

    pub fn capacity_factor(&self) -> &[f64] {
        &self.0[self.0.len() / 2..]
    }
}

/// Scales each bus by `1 + s_grid·u/100` with `u ~ U(low, high)` drawn in bus order.
pub fn perturb_demands<R: Rng + ?Sized>(
    base: &DemandVector,
    s_grid: f64,
    spec: &PerturbationSpec,
    rng: &mut R,
) -> DemandVector {
    DemandVector(
        base.iter()
            .map(|d| {
                let u: f64 = rng.random_range(spec.nodal_noise_low..spec.nodal_noise_high);
                d * nodal_factor(s_grid, u)
            })
            .collect(),
    )
}

#[inline]
pub fn nodal_factor(s_grid: f64, s_nodal: f64) -> f64 {
    1.0 + s_grid * s_nodal / 100.0
}

/// Sum of finite ratings of the in-service branches touching each bus.
pub fn incident_capacity(grid: &GridCase) -> Vec<f64> {
    let index = grid.bus_index();
    let mut cap = vec![0.0; grid.num_buses()];
    for (_, br) in grid.in_service_branches().filter(|(_, b)| b.is_limited()) {
        cap[index[&br.from_bus]] += br.rate_a_mw;
        cap[index[&br.to_bus]] += br.rate_a_mw;
    }
    cap
}

pub fn extract_features(grid: &GridCase, demand: &DemandVector) -> FeatureVector {
    let cap = incident_capacity(grid);
    let mut out = Vec::with_capacity(2 * demand.len());
    out.extend_from_slice(demand);
    out.extend(demand.iter().zip(&cap).map(|(d, c)| if *c > 0.0 { d / c } else { 0.0 }));
    FeatureVector(out)
}

pub fn make_contingency<R: Rng + ?Sized>(
    grid: &GridCase,
    test_case: TestCase,
    rng: &mut R,
    max_resamples: usize,
) -> Result<(GridCase, Modification), ScenarioError> {
    let modification = match test_case {
        TestCase::Base => Modification::None,
        TestCase::Derate10 => Modification::DerateAllBranches(0.10),
        TestCase::LineOut => {
            let candidates: Vec<usize> = grid.in_service_branches().map(|(k, _)| k).collect();
            if candidates.is_empty() {
                return Err(ScenarioError::ContingencyImpossible { test_case, attempts: 0 });
            }
            let attempts = max_resamples.max(1);
            for _ in 0..attempts {
                let k = candidates[rng.random_range(0..candidates.len())];
                let m = Modification::RemoveBranch(k);
                let cut = grid.apply_modification(m)?;
                if cut.is_connected() {
                    return Ok((cut, m));
                }
            }
            return Err(ScenarioError::ContingencyImpossible { test_case, attempts });
        }
        TestCase::GenOut => {
            let candidates: Vec<usize> = grid.in_service_generators().map(|(k, _)| k).collect();
            if candidates.len() < 2 {
                return Err(ScenarioError::ContingencyImpossible { test_case, attempts: 0 });
            }
            Modification::RemoveGenerator(candidates[rng.random_range(0..candidates.len())])
        }
    };
    Ok((grid.apply_modification(modification)?, modification))
}

fn instance_rng(seed: u64, instance: usize, attempt: usize, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[instance as u64, attempt as u64, purpose as u64]))
}

/// One solved instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub lmp: Vec<f64>,
    pub record: InstanceRecord,
}

/// Draws and solves instance `j` of a configuration, resampling non-optimal draws.
pub fn generate_instance(grid: &GridCase, config: &ScenarioConfig, j: usize) -> Result<Sample, ScenarioError> {
    let base = DemandVector::base(grid);
    let spec = &config.perturbation;
    let mut last = String::new();
    for attempt in 0..=config.max_resamples {
        let mut rng = instance_rng(config.seed, j, attempt, Purpose::GlobalLevel);
        let s_grid = if spec.s_grid_min == spec.s_grid_max {
            spec.s_grid_min
        } else {
            rng.random_range(spec.s_grid_min..=spec.s_grid_max)
        };
        let mut rng = instance_rng(config.seed, j, attempt, Purpose::Contingency);
        let (contingent, modification) =
            make_contingency(grid, config.test_case, &mut rng, config.max_resamples)?;
        let mut rng = instance_rng(config.seed, j, attempt, Purpose::NodalNoise);
        let demand = perturb_demands(&base, s_grid, spec, &mut rng);
        let sol = solve_dcopf(&contingent, &demand)?;
        if sol.is_optimal() {
            return Ok(Sample {
                features: extract_features(&contingent, &demand),
                lmp: sol.lmp,
                record: InstanceRecord {
                    s_grid,
                    modification,
                    resamples: attempt,
                },
            });
        }
        last = format!("{:?}", sol.status);
    }
    Err(ScenarioError::ResamplesExhausted {
        instance: j,
        attempts: config.max_resamples + 1,
        last,
    })
}

pub fn generate_dataset(grid: &GridCase, config: &ScenarioConfig) -> Result<Dataset, ScenarioError> {
    if config.n_instances == 0 {
        return Err(ScenarioError::BadConfig("n_instances must be positive".into()));
    }
    config.perturbation.validate()?;
    let report = grid.validate();
    if !report.is_valid() {
        return Err(OpfError::InvalidGrid(report).into());
    }
    let samples: Vec<Sample> = (0..config.n_instances)
        .into_par_iter()
        .map(|j| generate_instance(grid, config, j))
        .collect::<Result<_, _>>()?;

    let nb = grid.num_buses();
    let mut features = Array2::zeros((samples.len(), 2 * nb));
    let mut targets = Array2::zeros((samples.len(), nb));
    let mut instances = Vec::with_capacity(samples.len());
    for (j, s) in samples.into_iter().enumerate() {
        features.row_mut(j).assign(&ndarray::ArrayView1::from(&s.features.0));
        targets.row_mut(j).assign(&ndarray::ArrayView1::from(&s.lmp));
        instances.push(s.record);
    }
    Ok(Dataset {
        features,
        targets,
        metadata: DatasetMetadata::new(grid, *config, instances),
    })
}
