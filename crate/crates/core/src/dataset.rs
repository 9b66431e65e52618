//! Labelled datasets and their on-disk form: features CSV, targets CSV and a
//! JSON metadata sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{GridCase, Modification};
use crate::opf::DemandVector;
use crate::scenario::{ScenarioConfig, RNG_IDENTIFIER};

pub const FEATURES_FILE: &str = "features.csv";
pub const TARGETS_FILE: &str = "targets.csv";
pub const METADATA_FILE: &str = "dataset.json";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub s_grid: f64,
    pub modification: Modification,
    /// Number of infeasible draws replaced before this instance was accepted.
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub grid_name: String,
    pub grid_hash: String,
    pub bus_ids: Vec<u32>,
    pub config: ScenarioConfig,
    pub rng: String,
    pub instances: Vec<InstanceRecord>,
}

impl DatasetMetadata {
    pub fn new(grid: &GridCase, config: ScenarioConfig, instances: Vec<InstanceRecord>) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            grid_name: grid.name.clone(),
            grid_hash: grid.content_hash(),
            bus_ids: grid.buses.iter().map(|b| b.id).collect(),
            config,
            rng: RNG_IDENTIFIER.to_string(),
            instances,
        }
    }

    pub fn total_resamples(&self) -> usize {
        self.instances.iter().map(|r| r.resamples).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `n × 2·buses`: demands then capacity factors.
    pub features: Array2<f64>,
    /// `n × buses` LMPs in $/MWh.
    pub targets: Array2<f64>,
    pub metadata: DatasetMetadata,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("dataset inconsistent: {0}")]
    Inconsistent(String),
    #[error("requested {requested} rows but the dataset has {available}")]
    TooFewRows { requested: usize, available: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_buses(&self) -> usize {
        self.targets.ncols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let ids = &self.metadata.bus_ids;
        ids.iter()
            .map(|id| format!("Pd_{id}"))
            .chain(ids.iter().map(|id| format!("Pl_{id}")))
            .collect()
    }

    pub fn target_names(&self) -> Vec<String> {
        self.metadata.bus_ids.iter().map(|id| format!("lmp_{id}")).collect()
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let n = self.features.nrows();
        let nb = self.metadata.bus_ids.len();
        if self.targets.nrows() != n || self.metadata.instances.len() != n {
            return Err(DatasetError::Inconsistent(format!(
                "row counts differ: features {n}, targets {}, instances {}",
                self.targets.nrows(),
                self.metadata.instances.len()
            )));
        }
        if self.features.ncols() != 2 * nb || self.targets.ncols() != nb {
            return Err(DatasetError::Inconsistent(format!(
                "expected {} feature and {nb} target columns, got {} and {}",
                2 * nb,
                self.features.ncols(),
                self.targets.ncols()
            )));
        }
        if self.features.iter().chain(self.targets.iter()).any(|v| !v.is_finite()) {
            return Err(DatasetError::Inconsistent("non-finite entry".into()));
        }
        Ok(())
    }

    /// First `n` rows, used for nested training subsets.
    pub fn head(&self, n: usize) -> Result<Dataset, DatasetError> {
        if n > self.len() {
            return Err(DatasetError::TooFewRows {
                requested: n,
                available: self.len(),
            });
        }
        let mut metadata = self.metadata.clone();
        metadata.instances.truncate(n);
        metadata.config.n_instances = n;
        Ok(Dataset {
            features: self.features.slice(s![..n, ..]).to_owned(),
            targets: self.targets.slice(s![..n, ..]).to_owned(),
            metadata,
        })
    }

    /// Rebuilds the grid and demand of row `j` so it can be re-solved.
    pub fn scenario(&self, grid: &GridCase, j: usize) -> Result<(GridCase, DemandVector), DatasetError> {
        if grid.content_hash() != self.metadata.grid_hash {
            return Err(DatasetError::Inconsistent("grid hash does not match dataset".into()));
        }
        let record = self.metadata.instances.get(j).ok_or(DatasetError::TooFewRows {
            requested: j + 1,
            available: self.len(),
        })?;
        let g = grid
            .apply_modification(record.modification)
            .map_err(|e| DatasetError::Inconsistent(e.to_string()))?;
        let nb = self.num_buses();
        let demand = DemandVector(self.features.row(j).iter().take(nb).copied().collect());
        Ok((g, demand))
    }

    fn csv_text(header: &[String], m: &Array2<f64>) -> String {
        let mut out = header.join(",");
        out.push('\n');
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn features_csv(&self) -> String {
        Self::csv_text(&self.feature_names(), &self.features)
    }

    pub fn targets_csv(&self) -> String {
        Self::csv_text(&self.target_names(), &self.targets)
    }

    /// Digest of the two CSV files, identifying the data independent of metadata.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.features_csv().as_bytes());
        h.update(self.targets_csv().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let put = |name: &str, text: String| -> Result<(), DatasetError> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            f.write_all(text.as_bytes()).map_err(io_err(&path))
        };
        put(FEATURES_FILE, self.features_csv())?;
        put(TARGETS_FILE, self.targets_csv())?;
        put(
            METADATA_FILE,
            serde_json::to_string_pretty(&self.metadata).expect("metadata serializes") + "\n",
        )
    }

    pub fn read(dir: &Path) -> Result<Dataset, DatasetError> {
        let meta_path = dir.join(METADATA_FILE);
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let metadata: DatasetMetadata = serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            path: meta_path.display().to_string(),
            message: e.to_string(),
        })?;
        if metadata.format_version != DATASET_FORMAT_VERSION {
            return Err(DatasetError::Format {
                path: meta_path.display().to_string(),
                message: format!("unsupported format version {}", metadata.format_version),
            });
        }
        let nb = metadata.bus_ids.len();
        let features = read_matrix(&dir.join(FEATURES_FILE), 2 * nb)?;
        let targets = read_matrix(&dir.join(TARGETS_FILE), nb)?;
        let ds = Dataset {
            features,
            targets,
            metadata,
        };
        let (fh, th) = (ds.feature_names(), ds.target_names());
        check_header(&dir.join(FEATURES_FILE), &fh)?;
        check_header(&dir.join(TARGETS_FILE), &th)?;
        ds.check()?;
        Ok(ds)
    }
}

fn check_header(path: &Path, expected: &[String]) -> Result<(), DatasetError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DatasetError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let header = rdr.headers().map_err(|e| DatasetError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DatasetError::Format {
            path: path.display().to_string(),
            message: "header does not match metadata bus ids".into(),
        });
    }
    Ok(())
}

/// Reads a numeric CSV with a header row into an `n × cols` matrix.
pub fn read_matrix(path: &Path, cols: usize) -> Result<Array2<f64>, DatasetError> {
    let fmt = |message: String| DatasetError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        if rec.len() != cols {
            return Err(fmt(format!("row {} has {} fields, expected {cols}", i + 1, rec.len())));
        }
        for field in rec.iter() {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|_| fmt(format!("row {}: invalid number `{field}`", i + 1)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| fmt(e.to_string()))
}
