//! Run configuration: a TOML file whose values command-line flags override.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Keeps `self` where set, otherwise takes the value from `file`.
pub trait Merge {
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_fields {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn merge(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierChoice {
    Mixture,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct DataArgs {
    /// Measurement table with child_id, age and zscore columns (comma or tab separated).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Unit of the age column: days or years.
    #[arg(long)]
    pub age_unit: Option<String>,
    /// Analysis window start, in years.
    #[arg(long)]
    pub window_start: Option<f64>,
    /// Analysis window end, in years.
    #[arg(long)]
    pub window_end: Option<f64>,
    /// Measurements with |z| above this are excluded.
    #[arg(long)]
    pub exclusion_bound: Option<f64>,
}
merge_fields!(DataArgs { input, age_unit, window_start, window_end, exclusion_bound });

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArgs {
    /// Internal knots in years, comma separated (first knot is the window start).
    #[arg(long, value_delimiter = ',')]
    pub knots: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorChoice>,
    /// Drop each child's baseline row from the response in conditional models.
    #[arg(long)]
    pub drop_baseline_row: Option<bool>,
}
merge_fields!(ModelArgs { knots, estimator, drop_baseline_row });

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyArgs {
    #[arg(long, value_enum)]
    pub classifier: Option<ClassifierChoice>,
    /// Proportion labelled faltering by the threshold rule.
    #[arg(long)]
    pub proportion: Option<f64>,
    /// Posterior cutoff for the mixture rule.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Seed for the mixture restarts; generated and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}
merge_fields!(ClassifyArgs { classifier, proportion, cutoff, seed });

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Proportion of faltering children.
    #[arg(long)]
    pub proportion: Option<f64>,
    /// Observation schedule: dense (6-12 per child) or sparse (2-6).
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub children: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sigma_omega: Option<f64>,
    #[arg(long)]
    pub sigma_epsilon: Option<f64>,
}
merge_fields!(SimulateArgs { proportion, design, reps, children, seed, sigma_omega, sigma_epsilon });

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeArgs {
    /// Metrics to compute, comma separated (SDS, cSDS, RS, cRS, ARS, cARS, MRS, cMRS).
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Histogram bins for the mixture plot data.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Children per label whose trajectories are extracted.
    #[arg(long)]
    pub sample: Option<usize>,
}
merge_fields!(AnalyzeArgs { metrics, bins, sample });

/// Layout of the configuration file. Every key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: DataArgs,
    pub model: ModelArgs,
    pub classify: ClassifyArgs,
    pub simulate: SimulateArgs,
    pub analyze: AnalyzeArgs,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))
    }
}

/// Seed to use, drawing a fresh one from the clock when none was given.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        falter_core::rng::derive_seed(nanos, &[std::process::id() as u64])
    })
}
