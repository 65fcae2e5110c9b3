//! Run configuration. Every field has a default; a TOML file only needs to
//! list the values it overrides. `config/default.toml` at the repository
//! root echoes all defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::TrainConfig;
use crate::simuser::UserConfig;
use crate::Error;

/// Synthetic catalog generation and reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub clusters: usize,
    /// Target size after k-means reduction in attribute space; 0 disables it.
    pub reduce_to: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 3000, d: 32, m: 10, clusters: 12, reduce_to: 1000, seed: 7 }
    }
}

/// Search engine settings shared by training, evaluation and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Items shown per page; the search succeeds once the target is on it.
    pub page_size: usize,
    pub max_iterations: usize,
    /// Iterations of history in the agent state.
    pub history: usize,
    /// Top images per iteration in the state, and proxies per side.
    pub top_k: usize,
    /// Logistic scale for more/less, as a multiple of the attribute std.
    pub sigma_more_factor: f64,
    /// Equality kernel width, as a multiple of the attribute std.
    pub sigma_eq_factor: f64,
    /// Sketch kernel width, as a multiple of the RMS feature std times √d.
    pub tau_sketch_factor: f64,
    /// Lower clamp applied to every likelihood.
    pub floor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            page_size: 8,
            max_iterations: 10,
            history: 3,
            top_k: 5,
            sigma_more_factor: 0.25,
            sigma_eq_factor: 0.25,
            tau_sketch_factor: 1.0,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2, seed: 11 }
    }
}

impl SplitConfig {
    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Simulated users per test target.
    pub n_users: usize,
    /// Cap on test targets (0 = all of the test split).
    pub max_targets: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_users: 10, max_targets: 0, seed: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub search: SearchConfig,
    pub split: SplitConfig,
    pub user: UserConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides every seed with one derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        use crate::rng::derive_seed;
        self.data.seed = derive_seed(seed, "data", &[]);
        self.split.seed = derive_seed(seed, "split", &[]);
        self.train.seed = derive_seed(seed, "train", &[]);
        self.eval.seed = derive_seed(seed, "eval", &[]);
    }
}
