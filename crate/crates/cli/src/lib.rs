//! Command-line driver for the kmshrink experiments.
//!
//! Exit codes: 0 on success, 1 for bad input (flags, config, data files),
//! 2 when the numerical layer fails.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] kmshrink::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kmshrink", version, about = "Kernel mean shrinkage estimators and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loss of KME, S-KMSE and F-KMSE over a fixed grid of shrinkage values.
    LambdaSweep(SweepArgs),
    /// Loss over sample sizes and dimensions with leave-one-out shrinkage.
    NdSweep(SweepArgs),
    /// Kernel PCA reconstruction error under the five centering and
    /// covariance scenarios.
    KpcaBench(KpcaArgs),
    /// Fit one estimator on a dataset.
    Estimate(EstimateArgs),
    /// Leave-one-out score as a function of the shrinkage parameter.
    LoocvProfile(ProfileArgs),
    /// Gram matrix between groups of a dataset, through their mean embeddings.
    DistGram(DistGramArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Print the effective config and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Override any config key, e.g. `--set trials=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_assignment)]
    pub set: Vec<(String, Value)>,
}

#[derive(Debug, Args)]
pub struct CsvArgs {
    /// Dataset file (CSV).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// The first row holds column names.
    #[arg(long)]
    pub header: bool,
    /// Column to drop, by 1-based index or header name.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Standardize columns to zero mean and unit variance.
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Kernel, repeatable: lin, poly2, poly3, rbf, rbf:<bandwidth_sq>.
    #[arg(long)]
    pub kernel: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KpcaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub kernel: Option<String>,
    /// kme, s-kmse or f-kmse.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Fixed shrinkage; selected by leave-one-out when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub estimator: Option<String>,
    /// Also evaluate the direct fixed-point score at every grid point.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug, Args)]
pub struct DistGramArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Column holding group ids, by 1-based index or header name.
    #[arg(long)]
    pub group_column: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub estimator: Option<String>,
    /// Kernel between embeddings: linear or gaussian:<sigma_sq>.
    #[arg(long)]
    pub level2: Option<String>,
}

/// Collects flag values into config overrides.
#[derive(Default)]
pub(crate) struct Overrides(Map<String, Value>);

impl Overrides {
    pub(crate) fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub(crate) fn opt<V: Into<Value>>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.put(key, v);
        }
    }

    pub(crate) fn common(&mut self, c: &CommonArgs) {
        self.opt("seed", c.seed);
        for (k, v) in &c.set {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub(crate) fn csv(&mut self, c: &CsvArgs) {
        self.opt("data", c.data.as_ref().map(|p| p.display().to_string()));
        if c.header {
            self.put("header", true);
        }
        self.opt("label_column", c.label_column.clone());
        self.opt("normalize", c.normalize);
    }

    pub(crate) fn into_map(self) -> Map<String, Value> {
        self.0
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
