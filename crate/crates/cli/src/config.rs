//! Run configuration read from TOML. Every artifact path defaults to a
//! standard file name inside the output directory.

use std::path::{Path, PathBuf};

use hoser::eval_metrics::EvalOptions;
use hoser::synth::{GridSpec, SynthPolicy};
use hoser::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_dir: Option<PathBuf>,
    pub network: Option<PathBuf>,
    /// Raw trajectories before filtering and splitting.
    pub trajectories: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// OD request CSV `r_org,t_org,r_dest`.
    pub requests: Option<PathBuf>,
    pub generated: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub grid: GridSpec,
    pub policy: SynthPolicy,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { count: 5000, grid: GridSpec::default(), policy: SynthPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { ratios: [7.0, 1.0, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    /// Zone count; derived from the network size when absent.
    pub k: Option<usize>,
    pub eps: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self { k: None, eps: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Heap pops per request; 50 per segment when absent.
    pub budget: Option<usize>,
    /// Largest fraction of failed requests before the run counts as failed.
    pub max_failure_rate: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { budget: None, max_failure_rate: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub speed_kmh: f64,
    /// Moves allowed in a greedy Markov rollout; the segment count when absent.
    pub markov_step_cap: Option<usize>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { speed_kmh: hoser::baselines::DEFAULT_SPEED_KMH, markov_step_cap: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds split shuffling and partitioning.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub partition: PartitionSection,
    pub train: TrainConfig,
    pub search: SearchSection,
    pub eval: EvalOptions,
    pub baseline: BaselineSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::Missing(path.to_path_buf()))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn resolve(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.output_dir().join(default))
    }

    pub fn network(&self) -> PathBuf {
        self.resolve(&self.paths.network, "network.csv")
    }
    pub fn trajectories(&self) -> PathBuf {
        self.resolve(&self.paths.trajectories, "trajectories.jsonl")
    }
    pub fn train_set(&self) -> PathBuf {
        self.resolve(&self.paths.train, "train.jsonl")
    }
    pub fn val_set(&self) -> PathBuf {
        self.resolve(&self.paths.val, "val.jsonl")
    }
    pub fn test_set(&self) -> PathBuf {
        self.resolve(&self.paths.test, "test.jsonl")
    }
    pub fn partition(&self) -> PathBuf {
        self.resolve(&self.paths.partition, "partition.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.resolve(&self.paths.checkpoint, "model.ckpt")
    }
    pub fn requests(&self) -> PathBuf {
        self.resolve(&self.paths.requests, "requests.csv")
    }
    pub fn generated(&self) -> PathBuf {
        self.resolve(&self.paths.generated, "generated.jsonl")
    }

    /// Fills every path with its resolved value, for the config echo.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.paths = Paths {
            output_dir: Some(self.output_dir()),
            network: Some(self.network()),
            trajectories: Some(self.trajectories()),
            train: Some(self.train_set()),
            val: Some(self.val_set()),
            test: Some(self.test_set()),
            partition: Some(self.partition()),
            checkpoint: Some(self.checkpoint()),
            requests: Some(self.requests()),
            generated: Some(self.generated()),
        };
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.split.ratios.iter().any(|r| !(*r >= 0.0)) || !(self.split.ratios.iter().sum::<f64>() > 0.0) {
            return Err(CliError::Config("split.ratios must be non-negative with a positive sum".into()));
        }
        if !(self.partition.eps >= 0.0) || self.partition.k == Some(0) {
            return Err(CliError::Config("partition.k must be positive and partition.eps non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.search.max_failure_rate) {
            return Err(CliError::Config("search.max_failure_rate must be in [0, 1]".into()));
        }
        if !(self.baseline.speed_kmh > 0.0) {
            return Err(CliError::Config("baseline.speed_kmh must be positive".into()));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.eval.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
