mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lmpbench::dataset::DatasetError;
use lmpbench::eval::EvalError;
use lmpbench::grid::ParseError;
use lmpbench::models::ModelError;
use lmpbench::opf::OpfError;
use lmpbench::scenario::ScenarioError;

use config::RunConfig;

/// Invalid arguments or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Raised when a grid file parses but fails validation.
#[derive(Debug)]
pub struct InvalidData(pub String);

impl std::fmt::Display for InvalidData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidData {}

#[derive(Debug, Parser)]
#[command(name = "lmpbench", version, about = "DC-OPF price surrogates: data generation, training and benchmarks")]
struct Cli {
    /// TOML config file; flags given here override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true, env = "LMPBENCH_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Worker threads for generation and training.
    #[arg(long, global = true, env = "LMPBENCH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a case file.
    Parse {
        case: PathBuf,
        /// Print a machine-readable summary.
        #[arg(long)]
        json: bool,
    },
    /// Generate a labelled dataset by solving perturbed DC-OPF instances.
    Generate(Common),
    /// Fit models and save them with a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score models on test datasets.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`; scores those models as they are.
        #[arg(long, conflicts_with = "train")]
        models_dir: Option<PathBuf>,
        /// Training dataset for repeated fits.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Test dataset directories; generated per test case when absent.
        #[arg(long, num_args = 1..)]
        test: Vec<PathBuf>,
    },
    /// Time batch prediction against solving the same instances.
    Bench(Common),
    /// Accuracy against training-set size.
    Study(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Preset name or case file.
    #[arg(long)]
    grid: Option<String>,
    /// Number of instances to generate (training rows for train/evaluate/bench).
    #[arg(long = "n")]
    n_instances: Option<usize>,
    /// Global perturbation range in percent, e.g. -30:30.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    range: Option<[f64; 2]>,
    /// 1 base, 2 derated lines, 3 one line out, 4 one generator out.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    test_case: Option<u8>,
    /// Test cases to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4))]
    test_cases: Option<Vec<u8>>,
    /// Rows per test dataset.
    #[arg(long)]
    test_n: Option<usize>,
    /// Instances timed by `bench`.
    #[arg(long)]
    bench_n: Option<usize>,
    /// Seed for training data and model fits.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for test and benchmark data; defaults to seed + 1.
    #[arg(long)]
    test_seed: Option<u64>,
    /// Model labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Independent fits per model.
    #[arg(long)]
    repeats: Option<usize>,
    /// Training-set sizes for `study`, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(lo)?, p(hi)?])
}

impl Common {
    fn into_config(self) -> RunConfig {
        RunConfig {
            grid: self.grid,
            range: self.range,
            test_case: self.test_case,
            test_cases: self.test_cases,
            n_instances: self.n_instances,
            test_instances: self.test_n,
            bench_instances: self.bench_n,
            seed: self.seed,
            test_seed: self.test_seed,
            models: self.models,
            repeats: self.repeats,
            sizes: self.sizes,
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let globals = RunConfig {
        output: cli.output,
        threads: cli.threads,
        ..Default::default()
    };
    let with = |c: Common| file.clone().overlay(c.into_config()).overlay(globals.clone());
    match cli.command {
        Command::Parse { case, json } => commands::parse(&case, json),
        Command::Generate(c) => commands::generate(with(c)),
        Command::Train { common, data } => commands::train(with(common), data),
        Command::Evaluate {
            common,
            models_dir,
            train,
            test,
        } => commands::evaluate(with(common), models_dir, train, test),
        Command::Bench(c) => commands::bench(with(c)),
        Command::Study(c) => commands::study(with(c)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const SOLVER: u8 = 3;
const TRAINING: u8 = 4;

/// Maps the first recognised error in the chain to an exit status.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return USAGE;
        }
        if cause.is::<InvalidData>() || cause.is::<ParseError>() || cause.is::<DatasetError>() {
            return DATA;
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return DATA;
        }
        if let Some(x) = cause.downcast_ref::<OpfError>() {
            return opf_code(x);
        }
        if let Some(x) = cause.downcast_ref::<ScenarioError>() {
            return scenario_code(x);
        }
        if let Some(x) = cause.downcast_ref::<ModelError>() {
            return model_code(x);
        }
        if let Some(x) = cause.downcast_ref::<EvalError>() {
            return match x {
                EvalError::Shape { .. } | EvalError::Empty | EvalError::NearZero { .. } | EvalError::Dataset(_) => DATA,
                EvalError::BadSizes(_) | EvalError::BadExperiment(_) | EvalError::NoInstances => USAGE,
                EvalError::Scenario(s) => scenario_code(s),
                EvalError::Model(m) => model_code(m),
                EvalError::Opf(o) => opf_code(o),
                EvalError::Pool(_) => TRAINING,
            };
        }
    }
    DATA
}

fn opf_code(e: &OpfError) -> u8 {
    match e {
        OpfError::Qp(_) | OpfError::BaseNotOptimal(_) | OpfError::OracleInapplicable(_) => SOLVER,
        _ => DATA,
    }
}

fn scenario_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::BadConfig(_) => USAGE,
        ScenarioError::ResamplesExhausted { .. } => SOLVER,
        ScenarioError::Opf(o) => opf_code(o),
        ScenarioError::ContingencyImpossible { .. } | ScenarioError::Modification(_) => DATA,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::BadHyper(_) => USAGE,
        ModelError::Diverged { .. } | ModelError::NonFinite => TRAINING,
        _ => DATA,
    }
}
